/*
 * Copyright 2026 The labelembed Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "labelembed/common.hpp"
#include "labelembed/compat.hpp"
#include "labelembed/dataset.hpp"

namespace labelembed {

inline constexpr double kProbabilityClamp = 1e-12;

// One linear logistic classifier per attribute: p_e(x) = sigmoid(w_e'x + b_e).
struct AttributeClassifierBank {
  Matrix weights;  // D x E
  Vector bias;     // E
  std::vector<bool> degenerate;  // not serialized

  std::size_t dim_in() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t num_attributes() const { return static_cast<std::size_t>(weights.cols()); }
};

struct DapOptions {
  double gradient_tolerance = 1e-6;
  std::size_t max_newton_iterations = 200;
  std::size_t threads = 0;  // 0: hardware concurrency
};

struct LogisticFit {
  Vector w;
  double b = 0.0;
  double gradient_norm = 0.0;
  std::size_t iterations = 0;
};

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

// Objective and gradient of
//   (1/N) sum_n [softplus(z_n) - t_n z_n] + lambda/2 ||w||^2,  z = X w + b.
// The bias is not regularized.
inline double logistic_objective(const Matrix& x, const Vector& t, double lambda, const Vector& w, double b,
                                 Vector* grad_w = nullptr, double* grad_b = nullptr) {
  const Vector z = (x * w).array() + b;
  const double inv_n = 1.0 / static_cast<double>(x.rows());
  double f = 0.0;
  Vector residual(z.size());
  for (Eigen::Index n = 0; n < z.size(); ++n) {
    f += softplus(z(n)) - t(n) * z(n);
    residual(n) = sigmoid(z(n)) - t(n);
  }
  f = f * inv_n + 0.5 * lambda * w.squaredNorm();
  if (grad_w) *grad_w = inv_n * (x.transpose() * residual) + lambda * w;
  if (grad_b) *grad_b = inv_n * residual.sum();
  return f;
}

// Newton-CG with Armijo backtracking, stopping at ||grad||_2 <= tolerance.
inline LogisticFit fit_logistic(const Matrix& x, const Vector& t, double lambda, const DapOptions& opts = {}) {
  if (!(lambda > 0.0)) fail("fit_logistic: lambda must be > 0");
  const Eigen::Index d = x.cols();
  const double inv_n = 1.0 / static_cast<double>(x.rows());
  LogisticFit fit;
  fit.w = Vector::Zero(d);
  Vector gw;
  double gb = 0.0;
  double f = logistic_objective(x, t, lambda, fit.w, fit.b, &gw, &gb);
  for (std::size_t iter = 0; iter < opts.max_newton_iterations; ++iter) {
    const double gnorm = std::sqrt(gw.squaredNorm() + gb * gb);
    fit.gradient_norm = gnorm;
    fit.iterations = iter;
    if (gnorm <= opts.gradient_tolerance) return fit;

    const Vector z = (x * fit.w).array() + fit.b;
    Vector curvature(z.size());
    for (Eigen::Index n = 0; n < z.size(); ++n) {
      const double p = sigmoid(z(n));
      curvature(n) = p * (1.0 - p);
    }
    // H [vw; vb] = (1/N) [X 1]' S [X 1] [vw; vb] + [lambda vw; 0]
    auto hess = [&](const Vector& vw, double vb, Vector& hw, double& hb) {
      const Vector xv = ((x * vw).array() + vb).matrix();
      const Vector sxv = curvature.cwiseProduct(xv);
      hw = inv_n * (x.transpose() * sxv) + lambda * vw;
      hb = inv_n * sxv.sum();
    };
    // Conjugate gradient on H p = -g.
    Vector pw = Vector::Zero(d), rw = -gw;
    double pb = 0.0, rb = -gb;
    Vector dw = rw;
    double db = rb;
    double rr = rw.squaredNorm() + rb * rb;
    const double cg_tol = std::min(0.5, std::sqrt(gnorm)) * gnorm;
    for (Eigen::Index k = 0; k < d + 2 && std::sqrt(rr) > cg_tol; ++k) {
      Vector hw;
      double hb = 0.0;
      hess(dw, db, hw, hb);
      const double dhd = dw.dot(hw) + db * hb;
      if (!(dhd > 0.0)) break;
      const double a = rr / dhd;
      pw += a * dw;
      pb += a * db;
      rw -= a * hw;
      rb -= a * hb;
      const double rr_next = rw.squaredNorm() + rb * rb;
      dw = rw + (rr_next / rr) * dw;
      db = rb + (rr_next / rr) * db;
      rr = rr_next;
    }
    if (pw.squaredNorm() + pb * pb == 0.0) {
      pw = -gw;
      pb = -gb;
    }
    const double slope = gw.dot(pw) + gb * pb;
    double step = 1.0;
    Vector w_next;
    double b_next = 0.0, f_next = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      w_next = fit.w + step * pw;
      b_next = fit.b + step * pb;
      f_next = logistic_objective(x, t, lambda, w_next, b_next);
      if (f_next <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    fit.w = std::move(w_next);
    fit.b = b_next;
    f = logistic_objective(x, t, lambda, fit.w, fit.b, &gw, &gb);
  }
  fit.gradient_norm = std::sqrt(gw.squaredNorm() + gb * gb);
  return fit;
}

inline void require_zero_one(const AttributeTable& tab, const char* who) {
  if (!tab.is_zero_one()) fail(who, ": attribute table must be binary {0,1}");
}

// Fits one regularized logistic model per attribute; sample n has target
// rho(y_n, e). Attributes constant over the training classes are flagged
// degenerate and fixed to the clamped class-level prior. Attributes train
// concurrently; each result depends only on its own column.
inline AttributeClassifierBank train_dap(const SampleView& data, const AttributeTable& tab, double lambda,
                                         const DapOptions& opts = {}) {
  require_zero_one(tab, "train_dap");
  if (data.empty()) fail("train_dap: empty training set");
  if (data.num_classes() > tab.num_classes())
    fail("train_dap: attribute table has ", tab.num_classes(), " classes, data has ", data.num_classes());
  const auto n = static_cast<Eigen::Index>(data.size());
  Matrix x(n, static_cast<Eigen::Index>(data.dim()));
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) = data.row(static_cast<std::size_t>(i)).cast<double>();
  const auto classes = data.classes();

  const std::size_t num_attr = tab.num_attributes();
  AttributeClassifierBank bank;
  bank.weights = Matrix::Zero(x.cols(), static_cast<Eigen::Index>(num_attr));
  bank.bias = Vector::Zero(static_cast<Eigen::Index>(num_attr));
  bank.degenerate.assign(num_attr, false);

  auto train_one = [&](std::size_t e) {
    const auto col = static_cast<Eigen::Index>(e);
    double positives = 0;
    for (int c : classes) positives += tab.assoc(c, col);
    const double prior = positives / static_cast<double>(classes.size());
    if (prior == 0.0 || prior == 1.0) {
      const double p = std::clamp(prior, kProbabilityClamp, 1.0 - kProbabilityClamp);
      bank.bias(col) = std::log(p / (1.0 - p));
      bank.degenerate[e] = true;
      return;
    }
    Vector t(n);
    for (Eigen::Index i = 0; i < n; ++i) t(i) = tab.assoc(data.label(static_cast<std::size_t>(i)), col);
    const LogisticFit fit = fit_logistic(x, t, lambda, opts);
    bank.weights.col(col) = fit.w;
    bank.bias(col) = fit.b;
  };

  std::size_t threads = opts.threads ? opts.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, num_attr);
  if (threads <= 1) {
    for (std::size_t e = 0; e < num_attr; ++e) train_one(e);
    return bank;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      try {
        for (std::size_t e = next++; e < num_attr; e = next++) train_one(e);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return bank;
}

// p_e(x), clamped to [eps, 1 - eps].
inline Vector attribute_probabilities(const AttributeClassifierBank& bank, const Vector& x) {
  if (static_cast<std::size_t>(x.size()) != bank.dim_in())
    fail("dimension mismatch: feature has ", x.size(), " dims, bank expects D = ", bank.dim_in());
  const Vector z = bank.weights.transpose() * x + bank.bias;
  Vector p(z.size());
  for (Eigen::Index e = 0; e < z.size(); ++e)
    p(e) = std::clamp(sigmoid(z(e)), kProbabilityClamp, 1.0 - kProbabilityClamp);
  return p;
}

// log p(y|x) up to a constant: sum_e rho log p_e + (1 - rho) log(1 - p_e),
// one entry per class row of `tab`.
inline ScoreVector dap_log_scores(const Vector& probabilities, const AttributeTable& tab) {
  require_zero_one(tab, "dap_posteriors");
  if (static_cast<std::size_t>(probabilities.size()) != tab.num_attributes())
    fail("dap_posteriors: ", probabilities.size(), " attribute probabilities for ", tab.num_attributes(),
         " attributes");
  const Vector log_p = probabilities.array().log().matrix();
  const Vector log_q = (1.0 - probabilities.array()).log().matrix();
  return ScoreVector{tab.assoc * log_p + (1.0 - tab.assoc.array()).matrix() * log_q};
}

inline ScoreVector dap_posteriors(const AttributeClassifierBank& bank, const Vector& x, const AttributeTable& tab) {
  return dap_log_scores(attribute_probabilities(bank, x), tab);
}

inline int predict_dap(const AttributeClassifierBank& bank, const Vector& x, const AttributeTable& tab,
                       std::span<const int> candidates = {}) {
  return argmax_class(dap_posteriors(bank, x, tab), candidates);
}

inline constexpr std::uint64_t kBankMagic = 0x3142504144454C41ull;  // "ALEDAPB1"

// Model layout (magic, D, E, D*E f64 row-major) followed by E f64 biases.
inline void save_bank(const AttributeClassifierBank& bank, const std::string& path) {
  auto out = io::open_out(path, true);
  io::put_u64(out, kBankMagic);
  io::put_u64(out, bank.dim_in());
  io::put_u64(out, bank.num_attributes());
  for (Eigen::Index i = 0; i < bank.weights.rows(); ++i)
    for (Eigen::Index j = 0; j < bank.weights.cols(); ++j) io::put_f64(out, bank.weights(i, j));
  for (Eigen::Index j = 0; j < bank.bias.size(); ++j) io::put_f64(out, bank.bias(j));
  if (!out) fail("write failed for '", path, "'");
}

inline AttributeClassifierBank load_bank(const std::string& path) {
  auto in = io::open_in(path, true);
  if (io::get_u64(in, "magic") != kBankMagic) fail("'", path, "' is not an attribute bank file (bad magic)");
  const auto d = io::get_u64(in, "D");
  const auto e = io::get_u64(in, "E");
  if (d == 0 || e == 0 || d > (1ull << 36) / e) fail("'", path, "': implausible bank shape ", d, " x ", e);
  AttributeClassifierBank bank;
  bank.weights.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(e));
  for (Eigen::Index i = 0; i < bank.weights.rows(); ++i)
    for (Eigen::Index j = 0; j < bank.weights.cols(); ++j) bank.weights(i, j) = io::get_f64(in, "weights");
  bank.bias.resize(static_cast<Eigen::Index>(e));
  for (Eigen::Index j = 0; j < bank.bias.size(); ++j) bank.bias(j) = io::get_f64(in, "bias");
  bank.degenerate.assign(e, false);
  for (std::size_t j = 0; j < e; ++j)
    bank.degenerate[j] = bank.weights.col(static_cast<Eigen::Index>(j)).isZero(0.0);
  if (!bank.weights.allFinite() || !bank.bias.allFinite()) fail("'", path, "': bank has non-finite values");
  return bank;
}

}  // namespace labelembed
