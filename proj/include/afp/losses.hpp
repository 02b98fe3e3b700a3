// Training objectives for offline pre-training, online adaptation and the
// continuous-updating predictor.

#pragma once

#include <cmath>
#include <stdexcept>

#include "afp/metrics.hpp"
#include "afp/networks.hpp"

namespace afp {

struct PretrainWeights {
  double lambda_e = 2;
  double lambda_r1 = 3;
  double lambda_r2 = 7;
  double lambda_of = 0.1;

  void validate() const {
    for (double v : {lambda_e, lambda_r1, lambda_r2, lambda_of})
      if (!std::isfinite(v) || v < 0) throw std::invalid_argument("pretrain weights must be finite and >= 0");
  }
};

// lambda_E mu(x_e) + lambda_R1 mu(x_r1) + lambda_R2 mu(x_r2)
//   + lambda_OF (|grad v_prev|_1 + |grad v_t|_1)
template <typename T>
Tensor<T> loss_pretrain(const PredictionBundle<T>& b, const Frame<T>& gt, const PretrainWeights& w,
                        const MuWeights& muw, const FeatureExtractor<T>* extractor = nullptr) {
  w.validate();
  auto total = mul_scalar(mu(b.x_e, gt, muw, extractor), static_cast<T>(w.lambda_e));
  total = add(total, mul_scalar(mu(b.x_r1, gt, muw, extractor), static_cast<T>(w.lambda_r1)));
  total = add(total, mul_scalar(mu(b.x_r2, gt, muw, extractor), static_cast<T>(w.lambda_r2)));
  const auto smooth = add(gradient_l1(b.v_prev), gradient_l1(b.v_t));
  return add(total, mul_scalar(smooth, static_cast<T>(w.lambda_of)));
}

// mu(x_hat, gt) + lambda_c mu(x_hat_c, gt)
template <typename T>
Tensor<T> loss_adaptive(const Frame<T>& x_hat, const Frame<T>& x_hat_c, const Frame<T>& gt, double lambda_c,
                        const MuWeights& muw, const FeatureExtractor<T>* extractor = nullptr) {
  auto l = mu(x_hat, gt, muw, extractor);
  if (lambda_c == 0) return l;
  return add(l, mul_scalar(mu(x_hat_c, gt, muw, extractor), static_cast<T>(lambda_c)));
}

// mu(gt, f_C(x_prev, x_prev2)) for three consecutive frames.
template <typename T>
Tensor<T> loss_continuous(const Frame<T>& x_prev2, const Frame<T>& x_prev, const Frame<T>& gt,
                          const PredictionParams<T>& params, const MuWeights& muw,
                          const FeatureExtractor<T>* extractor = nullptr) {
  const auto b = predict(x_prev, x_prev2, params);
  return mu(gt, b.x_r2, muw, extractor);
}

}  // namespace afp
