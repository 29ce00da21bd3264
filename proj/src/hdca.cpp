#include "elip/hdca.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "elip/error.hpp"

namespace elip {

namespace {

// (windows x channels) window means of one epoch.
Eigen::MatrixXd window_means(const EegEpoch& e, std::size_t window, std::size_t windows) {
  Eigen::MatrixXd f(windows, e.channels);
  for (std::size_t w = 0; w < windows; ++w) {
    for (std::size_t c = 0; c < e.channels; ++c) {
      double s = 0.0;
      const float* p = e.data.data() + c * e.samples + w * window;
      for (std::size_t k = 0; k < window; ++k) s += p[k];
      f(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(c)) = s / static_cast<double>(window);
    }
  }
  return f;
}

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

}  // namespace

std::vector<double> HdcaModel::window_scores(const EegEpoch& e) const {
  if (e.channels != channels || e.samples < window * windows()) {
    throw ShapeError("HDCA: epoch " + std::to_string(e.channels) + "x" + std::to_string(e.samples) +
                     " does not match the fitted model");
  }
  const Eigen::MatrixXd f = window_means(e, window, windows());
  std::vector<double> s(windows());
  for (std::size_t w = 0; w < windows(); ++w) {
    Eigen::Map<const Eigen::VectorXd> wt(spatial[w].data(), static_cast<Eigen::Index>(channels));
    s[w] = f.row(static_cast<Eigen::Index>(w)).dot(wt);
  }
  return s;
}

double HdcaModel::probability(const EegEpoch& e) const {
  const auto s = window_scores(e);
  double z = bias;
  for (std::size_t w = 0; w < s.size(); ++w) z += temporal[w] * s[w];
  return sigmoid(z);
}

HdcaModel fit_hdca(const EpochDataset& train, std::size_t window, double ridge) {
  train.validate();
  if (window == 0 || train.samples < window) throw ConfigError("HDCA window must fit inside an epoch");
  if (train.count_label(kTarget) == 0 || train.count_label(kNontarget) == 0) {
    throw DataError("HDCA needs both classes in the training set");
  }
  HdcaModel m;
  m.window = window;
  m.channels = train.channels;
  const std::size_t W = train.samples / window, C = train.channels, N = train.size();
  const auto Ci = static_cast<Eigen::Index>(C);

  std::vector<Eigen::MatrixXd> feats;
  feats.reserve(N);
  for (const auto& e : train.epochs) feats.push_back(window_means(e, window, W));

  for (std::size_t w = 0; w < W; ++w) {
    Eigen::VectorXd mu[2] = {Eigen::VectorXd::Zero(Ci), Eigen::VectorXd::Zero(Ci)};
    double n[2] = {0, 0};
    for (std::size_t i = 0; i < N; ++i) {
      const int l = train.epochs[i].label;
      mu[l] += feats[i].row(static_cast<Eigen::Index>(w)).transpose();
      n[l] += 1;
    }
    mu[0] /= n[0];
    mu[1] /= n[1];
    Eigen::MatrixXd sw = Eigen::MatrixXd::Zero(Ci, Ci);
    for (std::size_t i = 0; i < N; ++i) {
      const Eigen::VectorXd d = feats[i].row(static_cast<Eigen::Index>(w)).transpose() - mu[train.epochs[i].label];
      sw.noalias() += d * d.transpose();
    }
    sw /= static_cast<double>(N);
    sw.diagonal().array() += ridge;
    const Eigen::VectorXd wt = sw.ldlt().solve(mu[1] - mu[0]);
    m.spatial.emplace_back(wt.data(), wt.data() + C);
  }

  // Logistic regression over window scores by Newton's method (IRLS).
  const auto Wi = static_cast<Eigen::Index>(W);
  Eigen::MatrixXd X(static_cast<Eigen::Index>(N), Wi + 1);
  Eigen::VectorXd y(static_cast<Eigen::Index>(N));
  for (std::size_t i = 0; i < N; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    for (std::size_t w = 0; w < W; ++w) {
      Eigen::Map<const Eigen::VectorXd> wt(m.spatial[w].data(), Ci);
      X(ii, static_cast<Eigen::Index>(w)) = feats[i].row(static_cast<Eigen::Index>(w)).dot(wt);
    }
    X(ii, Wi) = 1.0;
    y(ii) = train.epochs[i].label;
  }
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(Wi + 1);
  for (int it = 0; it < 50; ++it) {
    const Eigen::VectorXd z = X * beta;
    Eigen::VectorXd p(z.size()), wdiag(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      p(i) = sigmoid(z(i));
      wdiag(i) = std::max(p(i) * (1.0 - p(i)), 1e-12);
    }
    Eigen::VectorXd grad = X.transpose() * (p - y);
    Eigen::MatrixXd hess = X.transpose() * wdiag.asDiagonal() * X;
    for (Eigen::Index k = 0; k < Wi; ++k) {
      grad(k) += ridge * beta(k);
      hess(k, k) += ridge;
    }
    hess(Wi, Wi) += 1e-12;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);
    beta -= step;
    if (step.norm() < 1e-10) break;
  }
  m.temporal.assign(beta.data(), beta.data() + W);
  m.bias = beta(Wi);
  return m;
}

MetricsReport evaluate_hdca(const HdcaModel& model, const EpochDataset& test) {
  std::vector<int> pred(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) pred[i] = model.predict(test.epochs[i]);
  return subject_report(test, pred);
}

MetricsReport baseline_hdca(const EpochDataset& train, const EpochDataset& test, std::uint64_t seed) {
  return evaluate_hdca(fit_hdca(balance_downsample(train, seed)), test);
}

}  // namespace elip
