#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pdemix/integrate.hpp"
#include "pdemix/parallel.hpp"
#include "pdemix/reaction.hpp"
#include "pdemix/sample.hpp"

namespace pdemix {

struct Range {
  double lo = 0.0;
  double hi = 0.0;

  friend bool operator==(const Range&, const Range&) = default;
};

/// Gaussian-blob initial condition settings.
struct BlobConfig {
  Range amplitude{0.5, 1.0};
  Range sigma{2.0, 6.0};  // cells
  double center_margin = 4.0;

  friend bool operator==(const BlobConfig&, const BlobConfig&) = default;
};

struct GenConfig {
  std::size_t rows = 32;
  std::size_t cols = 32;
  std::size_t n_train = 800;
  std::size_t n_val = 200;
  std::size_t n_test = 1000;
  std::vector<double> obs_times{0.0, 12.0, 24.0};
  Range z_x_range{0.01, 1.0};
  Range z_r_range{0.01, 0.1};
  std::vector<ReactionKind> components{ReactionKind::Logistic0, ReactionKind::Logistic1,
                                       ReactionKind::Logistic2};
  std::uint64_t seed = 0;
  BlobConfig blob{};
  /// Std of additive Gaussian noise on frames after t = 0, physical units.
  double obs_noise_std = 0.0;
  /// Global min-max scaling; when off, frames stay in physical units.
  bool normalize = true;

  friend bool operator==(const GenConfig&, const GenConfig&) = default;

  void validate() const {
    require_stencil_shape(rows, cols);
    auto check_range = [](const Range& r, const char* name) {
      if (!(r.lo > 0.0 && r.lo < r.hi))
        throw std::invalid_argument(std::string(name) + " must satisfy 0 < lo < hi");
    };
    check_range(z_x_range, "z_x_range");
    check_range(z_r_range, "z_r_range");
    if (obs_times.empty() || obs_times.front() != 0.0)
      throw std::invalid_argument("obs_times must start at 0");
    for (std::size_t i = 1; i < obs_times.size(); ++i)
      if (!(obs_times[i] > obs_times[i - 1]))
        throw std::invalid_argument("obs_times must be strictly increasing");
    if (components.empty()) throw std::invalid_argument("components must not be empty");
    if (!(obs_noise_std >= 0.0)) throw std::invalid_argument("obs_noise_std must be >= 0");
    if (!(blob.amplitude.lo >= 0.0 && blob.amplitude.lo <= blob.amplitude.hi))
      throw std::invalid_argument("blob amplitude range must satisfy 0 <= lo <= hi");
    if (!(blob.sigma.lo > 0.0 && blob.sigma.lo <= blob.sigma.hi))
      throw std::invalid_argument("blob sigma range must satisfy 0 < lo <= hi");
    if (!(blob.center_margin >= 0.0) || 2.0 * blob.center_margin > double(std::min(rows, cols) - 1))
      throw std::invalid_argument("blob center_margin leaves no room for the center");
  }
};

enum class Split { Train, Val, Test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

/// Global min-max scaling applied to every frame.
struct Normalization {
  double min = 0.0;
  double max = 1.0;

  double apply(double v) const { return max > min ? (v - min) / (max - min) : 0.0; }

  friend bool operator==(const Normalization&, const Normalization&) = default;
};

struct Dataset {
  std::vector<SampleRecord> samples;
  Split split = Split::Test;
  Normalization normalization{};
  GenConfig provenance{};
};

struct DatasetSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

using Rng = std::mt19937_64;

/// Per-sample generator stream.
inline Rng sample_rng(std::uint64_t seed, std::uint64_t index) { return Rng(seed ^ index); }

struct BlobDraw {
  double amplitude;
  double sigma;
  double center_row;
  double center_col;
};

inline ScalarField render_blob(std::size_t rows, std::size_t cols, const BlobDraw& b) {
  ScalarField u(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const double di = double(i) - b.center_row;
      const double dj = double(j) - b.center_col;
      const double v = b.amplitude * std::exp(-(di * di + dj * dj) / (2.0 * b.sigma * b.sigma));
      u(i, j) = std::clamp(v, 0.0, 1.0);
    }
  return u;
}

inline double draw_uniform(Rng& rng, const Range& r) {
  if (r.lo == r.hi) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

inline BlobDraw draw_blob(Rng& rng, const GenConfig& config) {
  BlobDraw b{};
  b.amplitude = draw_uniform(rng, config.blob.amplitude);
  b.sigma = draw_uniform(rng, config.blob.sigma);
  const double m = config.blob.center_margin;
  b.center_row = draw_uniform(rng, {m, double(config.rows - 1) - m});
  b.center_col = draw_uniform(rng, {m, double(config.cols - 1) - m});
  return b;
}

inline ScalarField sample_initial_condition(Rng& rng, const GenConfig& config) {
  return render_blob(config.rows, config.cols, draw_blob(rng, config));
}

inline constexpr int kGenerateRetries = 5;

/// Draws coefficients and an initial blob, then integrates the chosen
/// component. Frames are in physical (unnormalized) units.
inline SampleRecord generate_sample(Rng& rng, std::size_t component_id, const GenConfig& config,
                                    std::string id = "sample") {
  if (component_id >= config.components.size())
    throw std::out_of_range("generate_sample: component id out of range");
  const ReactionKind kind = config.components[component_id];
  std::string last_error;
  for (int attempt = 0; attempt <= kGenerateRetries; ++attempt) {
    const double z_x = draw_uniform(rng, config.z_x_range);
    const double z_r = draw_uniform(rng, config.z_r_range);
    ScalarField u0 = sample_initial_condition(rng, config);
    PdeParams params{z_x, kind == ReactionKind::None ? 0.0 : z_r, kind};
    try {
      Trajectory traj = integrate(params, u0, config.obs_times);
      if (config.obs_noise_std > 0.0) {
        std::normal_distribution<double> eps(0.0, config.obs_noise_std);
        for (std::size_t f = 1; f < traj.frames.size(); ++f)
          for (double& v : traj.frames[f].values()) v += eps(rng);
      }
      SampleRecord rec;
      rec.id = std::move(id);
      rec.frames = std::move(traj.frames);
      rec.times = config.obs_times;
      rec.truth = GroundTruth{component_id, params.z_x, params.z_r};
      return rec;
    } catch (const SolverError& e) {
      last_error = e.what();
    }
  }
  throw std::runtime_error("generate_sample: solver failed after retries: " + last_error);
}

inline std::string sample_id(Split split, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s-%05zu", to_string(split), index);
  return buf;
}

/// Generates all splits. Components are assigned round-robin within each
/// split; every sample draws from its own stream seeded by seed ^ global
/// index. Frames are min-max scaled with constants shared by all splits
/// (identity when normalization is off) and rounded to single precision,
/// matching the on-disk representation.
inline DatasetSplits generate_dataset(const GenConfig& config, std::size_t workers = 1) {
  config.validate();
  struct Job {
    Split split;
    std::size_t local_index;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < config.n_train; ++i) jobs.push_back({Split::Train, i});
  for (std::size_t i = 0; i < config.n_val; ++i) jobs.push_back({Split::Val, i});
  for (std::size_t i = 0; i < config.n_test; ++i) jobs.push_back({Split::Test, i});

  std::vector<SampleRecord> records(jobs.size());
  const std::size_t k = config.components.size();
  parallel_for(jobs.size(), workers, [&](std::size_t g) {
    Rng rng = sample_rng(config.seed, g);
    records[g] =
        generate_sample(rng, jobs[g].local_index % k, config, sample_id(jobs[g].split, jobs[g].local_index));
  });

  Normalization norm;
  if (config.normalize && !records.empty()) {
    norm.min = records.front().frames.front().min();
    norm.max = records.front().frames.front().max();
    for (const auto& r : records)
      for (const auto& f : r.frames) {
        norm.min = std::min(norm.min, f.min());
        norm.max = std::max(norm.max, f.max());
      }
  }
  for (auto& r : records)
    for (auto& f : r.frames)
      for (double& v : f.values()) v = double(static_cast<float>(norm.apply(v)));

  DatasetSplits out;
  for (Dataset* d : {&out.train, &out.val, &out.test}) {
    d->normalization = norm;
    d->provenance = config;
  }
  out.train.split = Split::Train;
  out.val.split = Split::Val;
  out.test.split = Split::Test;
  for (std::size_t g = 0; g < jobs.size(); ++g) {
    Dataset& d = jobs[g].split == Split::Train ? out.train
                 : jobs[g].split == Split::Val ? out.val
                                               : out.test;
    d.samples.push_back(std::move(records[g]));
  }
  return out;
}

}  // namespace pdemix
