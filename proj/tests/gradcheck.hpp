// Copyright 2026 The csifb Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "csifb/losses.hpp"

namespace csifb::test {

struct GradCheck {
  std::size_t checked = 0;
  std::size_t over = 0;  // elements with error above tol
  double worst = 0.0;
  std::string worst_at;
};

// Central differences of the relaxed objective against rd_loss_grad for every
// element of phi and theta. Relative error uses max(|a|, |b|, floor).
inline GradCheck check_gradients(const Model& m, const std::vector<const Tensor*>& batch,
                                 const std::vector<Tensor>& noise, const Objective& obj, double step,
                                 double floor = 1e-6, double tol = 1e-4) {
  const LossGrad g = rd_loss_grad(m, batch, noise, obj);
  GradCheck out;
  Model probe = m;
  auto value = [&] { return rd_loss_grad(probe, batch, noise, Objective{obj.lambda, false, false, obj.update}).terms.value; };
  auto run = [&](ParamSet& ps, const std::vector<Tensor>& grads, const char* group) {
    for (std::size_t i = 0; i < ps.count(); ++i) {
      for (std::size_t k = 0; k < ps.tensors[i].size(); ++k) {
        double& x = ps.tensors[i][k];
        const double keep = x;
        x = keep + step;
        const double up = value();
        x = keep - step;
        const double down = value();
        x = keep;
        const double fd = (up - down) / (2.0 * step);
        const double an = grads[i][k];
        const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), floor});
        ++out.checked;
        if (err > tol) ++out.over;
        if (err > out.worst) {
          out.worst = err;
          out.worst_at = std::string(group) + " " + ps.names[i] + "[" + std::to_string(k) + "]";
        }
      }
    }
  };
  if (obj.train_phi) run(probe.phi, g.phi, "phi");
  if (obj.train_theta) run(probe.theta, g.theta, "theta");
  return out;
}

}  // namespace csifb::test
