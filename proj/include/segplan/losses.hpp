#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "segplan/errors.hpp"

namespace segplan {

inline constexpr double kDiceSmooth = 1e-5;
inline constexpr double kProbFloor = 1e-12;

// Dense batch x classes x voxels tensors in 64-bit.
struct LossInput {
  std::size_t batch = 1;
  std::size_t classes = 2;
  std::size_t voxels = 1;
  std::vector<double> logits;
  std::vector<double> target;  // one-hot, same layout
  bool batch_dice = false;

  std::size_t index(std::size_t b, std::size_t k, std::size_t i) const { return (b * classes + k) * voxels + i; }
};

inline void validate(const LossInput& in) {
  const std::size_t n = in.batch * in.classes * in.voxels;
  require(in.batch > 0 && in.classes > 0 && in.voxels > 0, "loss input has an empty axis");
  require(in.logits.size() == n && in.target.size() == n, "loss input: logits and target shapes disagree");
  for (std::size_t b = 0; b < in.batch; ++b) {
    for (std::size_t i = 0; i < in.voxels; ++i) {
      double sum = 0.0;
      for (std::size_t k = 0; k < in.classes; ++k) {
        const double v = in.target[in.index(b, k, i)];
        require(v == 0.0 || v == 1.0, "loss input: target is not one-hot");
        require(std::isfinite(in.logits[in.index(b, k, i)]), "loss input: non-finite logit");
        sum += v;
      }
      require(sum == 1.0, "loss input: target is not one-hot");
    }
  }
}

// Channel-wise softmax with the per-voxel maximum subtracted.
inline std::vector<double> softmax(const std::vector<double>& logits, std::size_t batch, std::size_t classes,
                                   std::size_t voxels) {
  require(logits.size() == batch * classes * voxels, "softmax: size mismatch");
  std::vector<double> out(logits.size());
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * classes * voxels;
    for (std::size_t i = 0; i < voxels; ++i) {
      double peak = -INFINITY;
      for (std::size_t k = 0; k < classes; ++k) peak = std::max(peak, logits[base + k * voxels + i]);
      double sum = 0.0;
      for (std::size_t k = 0; k < classes; ++k) {
        const double e = std::exp(logits[base + k * voxels + i] - peak);
        out[base + k * voxels + i] = e;
        sum += e;
      }
      for (std::size_t k = 0; k < classes; ++k) out[base + k * voxels + i] /= sum;
    }
  }
  return out;
}

inline std::vector<double> softmax(const LossInput& in) { return softmax(in.logits, in.batch, in.classes, in.voxels); }

namespace detail {

// Samples pooled by one dice evaluation: all of them for batch dice,
// otherwise one each.
inline std::size_t dice_groups(const LossInput& in) { return in.batch_dice ? 1 : in.batch; }

inline std::size_t group_of(const LossInput& in, std::size_t b) { return in.batch_dice ? 0 : b; }

// Per group and class: intersection and sum of both volumes.
inline void dice_terms(const LossInput& in, const std::vector<double>& u, std::vector<double>& inter,
                       std::vector<double>& total) {
  const std::size_t groups = dice_groups(in);
  inter.assign(groups * in.classes, 0.0);
  total.assign(groups * in.classes, 0.0);
  for (std::size_t b = 0; b < in.batch; ++b) {
    const std::size_t g = group_of(in, b);
    for (std::size_t k = 0; k < in.classes; ++k) {
      double ik = 0.0, sk = 0.0;
      for (std::size_t i = 0; i < in.voxels; ++i) {
        const std::size_t j = in.index(b, k, i);
        ik += u[j] * in.target[j];
        sk += u[j] + in.target[j];
      }
      inter[g * in.classes + k] += ik;
      total[g * in.classes + k] += sk;
    }
  }
}

}  // namespace detail

// Soft multi-class dice over probabilities u: -(1/|K|) sum_k (2 I_k + s)/(S_k + s)
// with background included, averaged over samples unless batch dice pools them.
inline double dice_loss_from_probs(const LossInput& in, const std::vector<double>& u) {
  std::vector<double> inter, total;
  detail::dice_terms(in, u, inter, total);
  const std::size_t groups = detail::dice_groups(in);
  double loss = 0.0;
  for (std::size_t g = 0; g < groups; ++g) {
    double dc = 0.0;
    for (std::size_t k = 0; k < in.classes; ++k) {
      dc += (2.0 * inter[g * in.classes + k] + kDiceSmooth) / (total[g * in.classes + k] + kDiceSmooth);
    }
    loss -= dc / static_cast<double>(in.classes);
  }
  return loss / static_cast<double>(groups);
}

inline double dice_loss(const LossInput& in) { return dice_loss_from_probs(in, softmax(in)); }

inline double ce_loss_from_probs(const LossInput& in, const std::vector<double>& u) {
  double sum = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    if (in.target[j] == 1.0) sum -= std::log(std::max(u[j], kProbFloor));
  }
  return sum / static_cast<double>(in.batch * in.voxels);
}

inline double ce_loss(const LossInput& in) { return ce_loss_from_probs(in, softmax(in)); }

struct LossAndGrad {
  double value = 0.0;
  double dice = 0.0;
  double ce = 0.0;
  std::vector<double> grad;  // d value / d logits
};

// dice + CE with the gradient chained through the softmax:
// dL/dz_j = u_j (g_j - sum_k u_k g_k) where g = dL/du.
inline LossAndGrad total_loss_and_grad(const LossInput& in) {
  validate(in);
  const std::vector<double> u = softmax(in);
  LossAndGrad out;
  out.dice = dice_loss_from_probs(in, u);
  out.ce = ce_loss_from_probs(in, u);
  out.value = out.dice + out.ce;

  std::vector<double> inter, total;
  detail::dice_terms(in, u, inter, total);
  const double dice_scale = -1.0 / static_cast<double>(in.classes * detail::dice_groups(in));
  const double ce_scale = 1.0 / static_cast<double>(in.batch * in.voxels);

  out.grad.assign(u.size(), 0.0);
  std::vector<double> g(in.classes);
  for (std::size_t b = 0; b < in.batch; ++b) {
    const std::size_t grp = detail::group_of(in, b);
    for (std::size_t i = 0; i < in.voxels; ++i) {
      double dot = 0.0;
      for (std::size_t k = 0; k < in.classes; ++k) {
        const std::size_t j = in.index(b, k, i);
        const double num = 2.0 * inter[grp * in.classes + k] + kDiceSmooth;
        const double den = total[grp * in.classes + k] + kDiceSmooth;
        g[k] = dice_scale * (2.0 * in.target[j] * den - num) / (den * den);
        dot += u[j] * g[k];
      }
      for (std::size_t k = 0; k < in.classes; ++k) {
        const std::size_t j = in.index(b, k, i);
        out.grad[j] = u[j] * (g[k] - dot);
      }
      // Cross-entropy part in closed form, (u - v)/N, except where the
      // probability floor makes the loss locally constant.
      for (std::size_t k = 0; k < in.classes; ++k) {
        const std::size_t t = in.index(b, k, i);
        if (in.target[t] != 1.0) continue;
        if (u[t] < kProbFloor) break;
        for (std::size_t c = 0; c < in.classes; ++c) {
          const std::size_t j = in.index(b, c, i);
          out.grad[j] += ce_scale * (u[j] - in.target[j]);
        }
        break;
      }
    }
  }
  return out;
}

}  // namespace segplan
