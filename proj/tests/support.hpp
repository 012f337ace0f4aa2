#pragma once

#include "cohedance/audio.hpp"
#include "cohedance/autodiff.hpp"
#include "cohedance/motion.hpp"
#include "cohedance/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace testing_support {

using namespace cohedance;

inline Mat3 random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return q.toRotationMatrix();
}

inline Mat3 rotation_about(const Vec3& axis, double angle) { return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix(); }

/// Random valid group sequence: root jitter around the origin, random joint
/// rotations.
inline GroupDanceSequence random_dance(int dancers, int frames, Rng& rng, double fps = kFps) {
  GroupDanceSequence d(dancers, frames, fps);
  for (int i = 0; i < dancers; ++i)
    for (int t = 0; t < frames; ++t) {
      MotionFrame f;
      f.tau = Vec3(rng.normal(0.0, 0.3), rng.normal(0.0, 0.3), rng.normal(0.0, 0.3));
      for (auto& r : f.theta) r = matrix_to_sixd(random_rotation(rng));
      d.set_frame(i, t, f);
    }
  return d;
}

inline MusicFeatureSequence random_music(int frames, Rng& rng) {
  MusicFeatureSequence m(frames);
  for (Eigen::Index k = 0; k < m.feats.size(); ++k) m.feats.data()[k] = rng.normal();
  return m;
}

template <class S>
Mat<S> random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Mat<S> m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<S>(rng.normal(0.0, scale));
  return m;
}

/// Largest relative error between analytic and central-difference
/// gradients over `samples` randomly chosen scalar parameters of `store`.
/// Only entries with a non-negligible analytic gradient are sampled.
inline double gradient_check(ParamStore<double>& store,
                             const std::function<Var<double>(Graph<double>&, const ParamStore<double>&)>& loss, Rng& rng,
                             int samples, double h = 1e-6) {
  Graph<double> g(true);
  Var<double> l = loss(g, store);
  g.backward(l);
  const auto grads = g.param_grads(store);

  struct Entry {
    std::string name;
    Eigen::Index index;
    double grad;
  };
  std::vector<Entry> candidates;
  for (const auto& [name, grad] : grads)
    for (Eigen::Index k = 0; k < grad.size(); ++k)
      if (std::abs(grad.data()[k]) > 1e-6) candidates.push_back({name, k, grad.data()[k]});
  if (candidates.empty()) return std::numeric_limits<double>::infinity();

  auto eval = [&] {
    Graph<double> ge(false);
    return loss(ge, store).scalar();
  };
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    const Entry& e = candidates[static_cast<std::size_t>(rng.below(candidates.size()))];
    double& w = store.at(e.name).data()[e.index];
    const double orig = w;
    w = orig + h;
    const double up = eval();
    w = orig - h;
    const double down = eval();
    w = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double rel = std::abs(numeric - e.grad) / std::max({std::abs(numeric), std::abs(e.grad), 1e-8});
    worst = std::max(worst, rel);
  }
  return worst;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("cohedance_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing_support
