#pragma once

// Subcommand bodies behind the pdemix executable. Each returns normally on
// success, including runs with per-sample failures, and throws on fatal
// errors (bad config, unreadable manifest, unwritable output).

#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdemix/config.hpp"
#include "pdemix/dataset_io.hpp"
#include "pdemix/engine.hpp"

namespace pdemix::cli {

namespace fs = std::filesystem;

/// Fatal command error; the executable prints it and exits nonzero.
class CommandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw CommandError("cannot create output directory " + dir.string() +
                       (ec ? ": " + ec.message() : ""));
  // create_directories succeeds on existing read-only dirs; probe writability.
  const fs::path probe = dir / ".pdemix-write-test";
  {
    std::ofstream t(probe);
    if (!t) throw CommandError("output directory is not writable: " + dir.string());
  }
  fs::remove(probe, ec);
}

inline std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw CommandError("cannot write " + path.string());
  return out;
}

/// A split directory holds manifest.json; a dataset root falls back to its
/// test split.
inline fs::path resolve_split_dir(const fs::path& data) {
  if (fs::exists(data / kManifestName)) return data;
  if (fs::exists(data / "test" / kManifestName)) return data / "test";
  throw CommandError("no " + std::string(kManifestName) + " under " + data.string());
}

struct LoadedSplit {
  Manifest manifest;
  fs::path dir;
  std::vector<SampleRecord> samples;  // successfully loaded, manifest order
  std::map<std::string, std::string> load_errors;
  std::vector<std::string> order;  // every manifest id
};

/// Reads the manifest strictly but isolates failures of individual sample files.
inline LoadedSplit load_split(const fs::path& data) {
  LoadedSplit out;
  out.dir = resolve_split_dir(data);
  try {
    out.manifest = read_manifest(out.dir);
  } catch (const DatasetError& e) {
    throw CommandError(e.what());
  }
  for (const auto& e : out.manifest.entries) {
    out.order.push_back(e.id);
    try {
      out.samples.push_back(load_sample(out.dir, e));
    } catch (const std::exception& err) {
      out.load_errors[e.id] = err.what();
    }
  }
  return out;
}

inline std::string kind_name(ReactionKind k) { return std::string(to_string(k)); }

/// Generating reaction kind of a sample, if the manifest records one.
inline std::optional<ReactionKind> generating_kind(const Manifest& m, const SampleRecord& s) {
  if (!s.truth || s.truth->component_id >= m.provenance.components.size()) return std::nullopt;
  return m.provenance.components[s.truth->component_id];
}

// --- generate -------------------------------------------------------------

inline void cmd_generate(const RunConfig& cfg, const fs::path& out_dir, std::size_t workers,
                         std::ostream& log) {
  ensure_dir(out_dir);
  const DatasetSplits splits = generate_dataset(cfg.generate, workers);
  try {
    write_splits(splits, out_dir);
  } catch (const DatasetError& e) {
    throw CommandError(e.what());
  }
  // Paths are left out so regenerating elsewhere yields identical bytes.
  json echo = to_json(cfg);
  echo.erase("paths");
  open_output(out_dir / "config.json") << echo.dump(2) << '\n';

  const std::size_t k = cfg.generate.components.size();
  for (const Dataset* d : {&splits.train, &splits.val, &splits.test}) {
    std::vector<std::size_t> counts(k, 0);
    for (const auto& s : d->samples) ++counts[s.truth->component_id];
    log << to_string(d->split) << ": " << d->samples.size() << " samples";
    for (std::size_t c = 0; c < k; ++c)
      log << (c ? ", " : " (") << kind_name(cfg.generate.components[c]) << " " << counts[c];
    log << (k ? ")" : "") << '\n';
  }
  log << "normalization min=" << fmt9(splits.test.normalization.min)
      << " max=" << fmt9(splits.test.normalization.max) << '\n';
}

// --- fit ------------------------------------------------------------------

struct FitSummary {
  std::size_t samples = 0;
  std::size_t failed = 0;
  std::optional<AssignmentEvaluation> evaluation;
};

inline FitSummary cmd_fit(const RunConfig& cfg, const fs::path& data, const fs::path& out_dir,
                          std::size_t workers, std::ostream& log) {
  LoadedSplit split = load_split(data);
  ensure_dir(out_dir);
  ensure_dir(out_dir / "reports");
  const auto comps = cfg.component_specs();
  const std::size_t k = comps.size();
  const std::string hash = config_hash(cfg);

  std::vector<FitReport> fitted = fit_samples(split.samples, comps, cfg.fit, workers);
  std::map<std::string, FitReport> by_id;
  for (auto& r : fitted) by_id[r.sample_id] = std::move(r);
  std::map<std::string, const SampleRecord*> sample_by_id;
  for (const auto& s : split.samples) sample_by_id[s.id] = &s;

  std::vector<FitReport> reports;
  for (const auto& id : split.order) {
    FitReport r;
    if (auto it = by_id.find(id); it != by_id.end()) {
      r = std::move(it->second);
    } else {
      r.sample_id = id;
      r.components = cfg.components;
      r.status = FitStatus::Failed;
      r.message = split.load_errors.count(id) ? split.load_errors.at(id) : "sample not loaded";
    }
    open_output(out_dir / "reports" / (id + ".json")) << to_json(r).dump(2) << '\n';
    reports.push_back(std::move(r));
  }

  FitSummary summary;
  summary.samples = reports.size();
  for (const auto& r : reports) summary.failed += !r.has_fit();

  // Assignment metrics need truth labels that index the fitted component list.
  const bool labelled = !split.samples.empty() &&
                        std::all_of(split.samples.begin(), split.samples.end(),
                                    [](const SampleRecord& s) { return s.truth.has_value(); }) &&
                        split.manifest.provenance.components == cfg.components;
  if (labelled) {
    std::vector<FitReport> loaded;
    for (const auto& r : reports)
      if (sample_by_id.count(r.sample_id)) loaded.push_back(r);
    summary.evaluation = evaluate_assignments(split.samples, loaded, k);
  }

  {
    auto out = open_output(out_dir / "confusion.csv");
    std::vector<std::string> header{"true_component"};
    for (auto kind : cfg.components) header.push_back("pred_" + kind_name(kind));
    write_csv_preamble(out, hash, cfg.fit.seed, header);
    if (summary.evaluation)
      for (std::size_t i = 0; i < k; ++i) {
        out << kind_name(cfg.components[i]);
        for (std::size_t j = 0; j < k; ++j) out << ',' << summary.evaluation->confusion[i][j];
        out << '\n';
      }
  }
  {
    auto out = open_output(out_dir / "weights.csv");
    std::vector<std::string> header{"sample_id", "true_component", "status", "assigned"};
    for (auto kind : cfg.components) header.push_back("c_" + kind_name(kind));
    write_csv_preamble(out, hash, cfg.fit.seed, header);
    for (const auto& r : reports) {
      const auto sit = sample_by_id.find(r.sample_id);
      const bool has_truth = sit != sample_by_id.end() && sit->second->truth;
      out << r.sample_id << ',' << (has_truth ? std::to_string(sit->second->truth->component_id) : "")
          << ',' << to_string(r.status) << ',' << (r.has_fit() ? std::to_string(r.assigned) : "");
      for (std::size_t c = 0; c < k; ++c)
        out << ',' << (r.has_fit() && c < r.final_weights.size() ? fmt9(r.final_weights[c]) : "");
      out << '\n';
    }
  }
  {
    auto out = open_output(out_dir / "residuals.csv");
    write_csv_preamble(out, hash, cfg.fit.seed,
                       {"sample_id", "true_component", "assigned", "correct", "z_x_true", "z_x_est",
                        "z_x_residual", "z_r_true", "z_r_est", "z_r_residual"});
    if (summary.evaluation)
      for (const auto& row : summary.evaluation->residuals)
        out << row.sample_id << ',' << row.true_component << ',' << row.assigned << ','
            << (row.correct() ? 1 : 0) << ',' << fmt9(row.z_x_true) << ',' << fmt9(row.z_x_est) << ','
            << fmt9(row.z_x_residual()) << ',' << fmt9(row.z_r_true) << ',' << fmt9(row.z_r_est) << ','
            << fmt9(row.z_r_residual()) << '\n';
  }
  {
    auto out = open_output(out_dir / "elbo_trace.csv");
    write_csv_preamble(out, hash, cfg.fit.seed, {"sample_id", "iteration", "elbo"});
    for (const auto& r : reports)
      for (std::size_t i = 0; i < r.elbo_trace.size(); ++i)
        out << r.sample_id << ',' << i << ',' << fmt9(r.elbo_trace[i]) << '\n';
  }
  {
    json s{{"samples", summary.samples}, {"failed", summary.failed}, {"config_hash", hash}};
    if (summary.evaluation) {
      s["accuracy"] = round9(summary.evaluation->accuracy);
      s["macro_recall"] = round9(summary.evaluation->macro_recall);
      s["confusion"] = summary.evaluation->confusion;
      s["diagonally_dominant"] = summary.evaluation->diagonally_dominant();
    }
    open_output(out_dir / "summary.json") << s.dump(2) << '\n';
  }

  log << "fitted " << summary.samples - summary.failed << "/" << summary.samples << " samples";
  if (summary.failed) log << " (" << summary.failed << " failed)";
  log << '\n';
  if (summary.evaluation)
    log << "accuracy " << fmt9(summary.evaluation->accuracy) << ", macro recall "
        << fmt9(summary.evaluation->macro_recall) << '\n';
  for (const auto& [id, msg] : split.load_errors) log << "  " << id << ": " << msg << '\n';
  return summary;
}

// --- evidence -------------------------------------------------------------

/// Every non-empty subset, ordered by size and then lexicographically.
inline std::vector<std::vector<std::size_t>> all_subsets(std::size_t k) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t size = 1; size <= k; ++size)
    for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << k); ++mask) {
      if (std::size_t(std::popcount(mask)) != size) continue;
      std::vector<std::size_t> s;
      for (std::size_t i = 0; i < k; ++i)
        if (mask >> i & 1) s.push_back(i);
      out.push_back(std::move(s));
    }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.size() != b.size() ? a.size() < b.size() : a < b;
  });
  return out;
}

/// Parses "0,2" into {0, 2}, checking range and duplicates.
inline std::vector<std::size_t> parse_subset(const std::string& text, std::size_t num_components) {
  json arr = json::array();
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (item.empty() || pos != item.size() || item[0] == '-')
      throw ConfigError("invalid subset '" + text + "': expected comma-separated component indices");
    arr.push_back(v);
  }
  return subset_from_json(arr, num_components, "subset '" + text + "'");
}

inline std::string subset_label(const std::vector<std::size_t>& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "+" : "") + std::to_string(s[i]);
  return out;
}

struct EvidenceRow {
  std::uint64_t seed = 0;
  std::vector<std::size_t> subset;
  double evidence = 0.0;
  double std_error = 0.0;
  std::size_t failed = 0;
  std::size_t rank = 0;  // 1 = highest evidence within the seed
};

/// Ranks rows sharing a seed by descending evidence; ties keep table order.
inline void rank_rows(std::vector<EvidenceRow>& rows) {
  std::map<std::uint64_t, std::vector<std::size_t>> by_seed;
  for (std::size_t i = 0; i < rows.size(); ++i) by_seed[rows[i].seed].push_back(i);
  for (auto& [_, idx] : by_seed) {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return rows[a].evidence > rows[b].evidence; });
    for (std::size_t r = 0; r < idx.size(); ++r) rows[idx[r]].rank = r + 1;
  }
}

inline std::vector<EvidenceRow> cmd_evidence(const RunConfig& cfg, const fs::path& data,
                                             const fs::path& out_dir, std::size_t workers,
                                             std::ostream& log) {
  LoadedSplit split = load_split(data);
  ensure_dir(out_dir);
  const auto comps = cfg.component_specs();
  const auto subsets = cfg.evidence_subsets.empty() ? all_subsets(comps.size()) : cfg.evidence_subsets;
  for (const auto& [id, msg] : split.load_errors) log << "  skipping " << id << ": " << msg << '\n';

  std::vector<EvidenceRow> rows;
  for (std::uint64_t seed : cfg.seed_list()) {
    FitConfig fc = cfg.fit;
    fc.seed = seed;
    for (const auto& subset : subsets) {
      const EvidenceResult res = model_evidence(split.samples, comps, subset, fc, workers);
      EvidenceRow row{seed, subset, res.evidence, res.std_error, 0, 0};
      for (const auto& r : res.reports) row.failed += !r.has_fit();
      rows.push_back(row);
    }
  }
  rank_rows(rows);

  auto out = open_output(out_dir / "evidence.csv");
  write_csv_preamble(out, config_hash(cfg), cfg.seed_list().front(),
                     {"seed", "subset", "components", "evidence", "std_error", "failed", "rank"});
  for (const auto& r : rows) {
    std::string names;
    for (std::size_t i = 0; i < r.subset.size(); ++i)
      names += (i ? "+" : "") + kind_name(cfg.components[r.subset[i]]);
    out << r.seed << ',' << subset_label(r.subset) << ',' << names << ',' << fmt9(r.evidence) << ','
        << fmt9(r.std_error) << ',' << r.failed << ',' << r.rank << '\n';
  }
  for (const auto& r : rows)
    if (r.rank == 1) log << "seed " << r.seed << ": best subset " << subset_label(r.subset) << '\n';
  return rows;
}

// --- predict --------------------------------------------------------------

struct PredictOutput {
  fs::path frames_file;
  fs::path cross_section_file;
  Trajectory trajectory;
};

/// `report` is a report file or a fit output directory holding reports/<id>.json.
inline PredictOutput cmd_predict(const RunConfig& cfg, const fs::path& data, const fs::path& report,
                                 const std::string& sample_id, std::vector<double> times,
                                 const fs::path& out_dir, std::ostream& log) {
  const fs::path report_file = fs::is_directory(report) ? report / "reports" / (sample_id + ".json") : report;
  std::ifstream in(report_file);
  if (!in) throw CommandError("cannot open report " + report_file.string());
  FitReport rep;
  try {
    rep = fit_report_from_json(json::parse(in));
  } catch (const std::exception& e) {
    throw CommandError(report_file.string() + ": " + e.what());
  }
  if (rep.sample_id != sample_id)
    throw CommandError("report " + report_file.string() + " belongs to sample '" + rep.sample_id + "'");
  if (!rep.has_fit()) throw CommandError("sample '" + sample_id + "' has no successful fit");

  const fs::path dir = resolve_split_dir(data);
  const Manifest m = read_manifest(dir);
  auto it = std::find_if(m.entries.begin(), m.entries.end(),
                         [&](const ManifestEntry& e) { return e.id == sample_id; });
  if (it == m.entries.end()) throw CommandError("unknown sample id '" + sample_id + "'");
  const SampleRecord sample = load_sample(dir, *it);
  if (times.empty()) times = cfg.predict_times.empty() ? sample.times : cfg.predict_times;

  const auto comps = make_components(rep.components, cfg.prior);
  PredictOutput out;
  out.trajectory = predict(rep, comps, sample, times, cfg.fit.seed, cfg.predict_draws, cfg.fit.solver);

  ensure_dir(out_dir);
  out.frames_file = out_dir / (sample_id + "_predict.f32");
  write_f32(out.frames_file, out.trajectory.frames);
  open_output(out_dir / (sample_id + "_predict.json"))
      << json{{"sample_id", sample_id},
              {"times", out.trajectory.times},
              {"shape", json::array({out.trajectory.frames.size(), sample.rows(), sample.cols()})},
              {"component", kind_name(rep.components[rep.assigned])}}
             .dump(2)
      << '\n';

  // Central row (horizontal) and column (vertical) sections; observed values
  // are filled in where a requested time matches an observation.
  out.cross_section_file = out_dir / (sample_id + "_cross_sections.csv");
  auto csv = open_output(out.cross_section_file);
  write_csv_preamble(csv, config_hash(cfg), cfg.fit.seed, {"time", "axis", "index", "predicted", "observed"});
  const std::size_t rows = sample.rows(), cols = sample.cols();
  for (std::size_t t = 0; t < times.size(); ++t) {
    const ScalarField& f = out.trajectory.frames[t];
    const ScalarField* obs = nullptr;
    for (std::size_t o = 0; o < sample.times.size(); ++o)
      if (sample.times[o] == times[t]) obs = &sample.frames[o];
    for (std::size_t j = 0; j < cols; ++j)
      csv << fmt9(times[t]) << ",horizontal," << j << ',' << fmt9(f(rows / 2, j)) << ','
          << (obs ? fmt9((*obs)(rows / 2, j)) : "") << '\n';
    for (std::size_t i = 0; i < rows; ++i)
      csv << fmt9(times[t]) << ",vertical," << i << ',' << fmt9(f(i, cols / 2)) << ','
          << (obs ? fmt9((*obs)(i, cols / 2)) : "") << '\n';
  }
  log << "predicted " << times.size() << " frames for " << sample_id << " with "
      << kind_name(rep.components[rep.assigned]) << '\n';
  return out;
}

// --- degeneracy -----------------------------------------------------------

struct DegeneracyRow {
  std::optional<DegeneracyReport> report;
  std::string sample_id;
  std::string error;
};

inline std::vector<DegeneracyRow> cmd_degeneracy(const RunConfig& cfg, const fs::path& data,
                                                 const fs::path& out_dir, std::size_t true_id,
                                                 std::size_t wrong_id, std::size_t workers,
                                                 std::ostream& log) {
  const auto comps = cfg.component_specs();
  if (true_id >= comps.size() || wrong_id >= comps.size())
    throw CommandError("component ids must be below " + std::to_string(comps.size()));
  LoadedSplit split = load_split(data);
  ensure_dir(out_dir);

  std::vector<const SampleRecord*> eligible;
  std::size_t skipped = 0;
  for (const auto& s : split.samples) {
    if (generating_kind(split.manifest, s) == comps[true_id].kind)
      eligible.push_back(&s);
    else
      ++skipped;
  }

  std::vector<DegeneracyRow> rows(eligible.size());
  parallel_for(eligible.size(), workers, [&](std::size_t i) {
    rows[i].sample_id = eligible[i]->id;
    try {
      rows[i].report = degeneracy_probe(*eligible[i], comps[true_id], comps[wrong_id], cfg.fit);
    } catch (const std::exception& e) {
      rows[i].error = e.what();
    }
  });

  auto out = open_output(out_dir / "degeneracy.csv");
  write_csv_preamble(out, config_hash(cfg), cfg.fit.seed,
                     {"sample_id", "true_kind", "wrong_kind", "nll_true", "nll_wrong", "gap", "rel_gap",
                      "err_true", "err_wrong", "z_r_est_true", "z_r_est_wrong", "status_true",
                      "status_wrong", "flag", "error"});
  std::size_t flags = 0;
  for (const auto& r : rows) {
    out << r.sample_id << ',' << kind_name(comps[true_id].kind) << ',' << kind_name(comps[wrong_id].kind);
    if (r.report) {
      const auto& d = *r.report;
      flags += d.flag;
      out << ',' << fmt9(d.nll_true) << ',' << fmt9(d.nll_wrong) << ',' << fmt9(d.gap) << ','
          << fmt9(d.rel_gap) << ',' << fmt9(d.err_true) << ',' << fmt9(d.err_wrong) << ','
          << fmt9(d.est_true.z_r) << ',' << fmt9(d.est_wrong.z_r) << ',' << to_string(d.status_true) << ','
          << to_string(d.status_wrong) << ',' << (d.flag ? 1 : 0) << ",\n";
    } else {
      out << ",,,,,,,,,Failed,Failed,0," << csv_field(r.error) << '\n';
    }
  }
  for (const auto& [id, msg] : split.load_errors) log << "  skipping " << id << ": " << msg << '\n';
  log << "degeneracy flagged on " << flags << "/" << rows.size() << " samples";
  if (skipped) log << " (" << skipped << " samples from other components skipped)";
  log << '\n';
  return rows;
}

}  // namespace pdemix::cli
