#pragma once

#include <atomic>
#include <bit>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lorafed/config.hpp"
#include "lorafed/experiment.hpp"
#include "lorafed/random.hpp"

namespace lorafed {

/// Grid over client count, Dirichlet alpha and seed. Every other setting is
/// shared by all cells.
struct SweepSpec {
  ExperimentConfig base;
  std::vector<std::size_t> clients;
  std::vector<double> alphas;
  std::vector<std::uint64_t> seeds;
};

inline SweepSpec parse_sweep(const ConfigFile& cf) {
  SweepSpec s;
  s.base = preset_config(cf.preset);
  for (const auto& [key, values] : cf.entries) {
    if (key == "federation.clients") {
      for (const auto& v : values) s.clients.push_back(detail::parse_uint(key, v));
    } else if (key == "data.dirichlet_alpha") {
      for (const auto& v : values) s.alphas.push_back(detail::parse_real(key, v));
    } else if (key == "seed") {
      for (const auto& v : values) s.seeds.push_back(detail::parse_uint(key, v));
    } else {
      if (values.size() != 1) fail(ErrorCode::kConfig, key + ": only federation.clients, data.dirichlet_alpha and seed may be lists");
      apply_setting(s.base, key, values.front());
    }
  }
  if (s.clients.empty()) s.clients.push_back(s.base.clients);
  if (s.alphas.empty()) s.alphas.push_back(s.base.dirichlet_alpha);
  if (s.seeds.empty()) s.seeds.push_back(s.base.seed);
  return s;
}

struct SweepCell {
  std::size_t clients = 0;
  double alpha = 0.0;
  std::uint64_t seed = 0;  // value from the seed axis
  std::size_t seed_index = 0;
  ExperimentConfig config;  // config.seed is the derived cell seed

  std::string run_id() const {
    char buf[96];
    std::snprintf(buf, sizeof buf, "K%zu_a%g_s%llu", clients, alpha, static_cast<unsigned long long>(seed));
    return buf;
  }
};

inline std::uint64_t cell_seed(std::uint64_t run_seed, std::size_t clients, double alpha, std::size_t seed_index) {
  std::uint64_t h = detail::splitmix64(run_seed ^ 0x6c6f726166656455ULL);
  h = detail::splitmix64(h ^ clients);
  h = detail::splitmix64(h ^ std::bit_cast<std::uint64_t>(alpha));
  h = detail::splitmix64(h ^ seed_index);
  return h;
}

/// Cells in row-major (clients, alpha, seed) order.
inline std::vector<SweepCell> expand(const SweepSpec& s) {
  std::vector<SweepCell> cells;
  for (std::size_t k : s.clients)
    for (double a : s.alphas)
      for (std::size_t i = 0; i < s.seeds.size(); ++i) {
        SweepCell c{k, a, s.seeds[i], i, s.base};
        c.config.clients = k;
        c.config.dirichlet_alpha = a;
        c.config.seed = cell_seed(s.seeds[i], k, a, i);
        try {
          validate(c.config);
        } catch (const Error& e) {
          fail(ErrorCode::kConfig, "sweep cell " + c.run_id() + ": " + e.what());
        }
        cells.push_back(std::move(c));
      }
  return cells;
}

struct SweepRow {
  SweepCell cell;
  nlohmann::ordered_json summary;
  bool reused = false;
};

/// A cell is complete when all three output files exist and the summary
/// carries the cell's config checksum.
inline std::optional<nlohmann::ordered_json> completed_summary(const std::filesystem::path& dir, const SweepCell& cell) {
  namespace fs = std::filesystem;
  if (!fs::exists(dir / kMetricsFile) || !fs::exists(dir / kCheckpointFile) || !fs::exists(dir / kSummaryFile)) {
    return std::nullopt;
  }
  try {
    auto j = nlohmann::ordered_json::parse(read_file((dir / kSummaryFile).string()));
    if (j.value("config_checksum", std::string()) != config_checksum(cell.config)) return std::nullopt;
    return j;
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

inline constexpr const char* kSweepResultsFile = "results.csv";

inline std::string sweep_results_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "run_id,clients,dirichlet_alpha,seed,cell_seed,heterogeneity_index,final_acc,final_loss_u,final_loss_g,"
        "total_bytes_up,total_bytes_down\n";
  for (const auto& r : rows) {
    const auto& j = r.summary;
    os << r.cell.run_id() << ',' << r.cell.clients << ',' << detail::format_real(r.cell.alpha) << ',' << r.cell.seed
       << ',' << r.cell.config.seed << ',' << detail::format_real(j.at("heterogeneity_index").get<double>()) << ','
       << detail::format_real(j.at("final_accuracy").get<double>()) << ','
       << detail::format_real(j.at("final_loss_u").get<double>()) << ','
       << detail::format_real(j.at("final_loss_g").get<double>()) << ',' << j.at("total_bytes_up").get<std::size_t>()
       << ',' << j.at("total_bytes_down").get<std::size_t>() << '\n';
  }
  return os.str();
}

using CellObserver = std::function<void(const SweepRow&)>;

/// Runs every incomplete cell, up to `workers` at a time, each into
/// `out_dir/<run_id>/`, then writes `out_dir/results.csv`.
inline std::vector<SweepRow> run_sweep(const SweepSpec& spec, const std::filesystem::path& out_dir,
                                       std::size_t workers = 1, const CellObserver& on_cell = {}) {
  if (workers < 1) fail(ErrorCode::kConfig, "workers must be >= 1");
  const auto cells = expand(spec);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create '" + out_dir.string() + "': " + ec.message());
  std::vector<SweepRow> rows(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::mutex report_mu;
  auto work = [&](std::size_t i) {
    const SweepCell& cell = cells[i];
    const auto dir = out_dir / cell.run_id();
    try {
      rows[i].cell = cell;
      if (auto done = completed_summary(dir, cell)) {
        rows[i].summary = std::move(*done);
        rows[i].reused = true;
      } else {
        const PreparedExperiment prep = prepare_experiment(cell.config);
        const ExperimentResult res = run_experiment(prep);
        write_run_outputs(dir, cell.run_id(), prep, res);
        rows[i].summary = run_summary(cell.run_id(), prep, res);
      }
      if (on_cell) {
        std::lock_guard lock(report_mu);
        on_cell(rows[i]);
      }
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  std::atomic<std::size_t> next{0};
  auto drain = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) work(i);
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < std::min(workers, cells.size()); ++w) pool.emplace_back(drain);
  drain();
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const Error& e) {
      fail(e.code(), "sweep cell " + cells[i].run_id() + ": " + e.what());
    }
  }
  write_file((out_dir / kSweepResultsFile).string(), sweep_results_csv(rows));
  return rows;
}

/// Mean final accuracy over seeds for every (clients, alpha) pair.
inline std::map<std::pair<std::size_t, double>, double> seed_mean_accuracy(const std::vector<SweepRow>& rows) {
  std::map<std::pair<std::size_t, double>, std::pair<double, std::size_t>> acc;
  for (const auto& r : rows) {
    auto& [sum, n] = acc[{r.cell.clients, r.cell.alpha}];
    sum += r.summary.at("final_accuracy").get<double>();
    ++n;
  }
  std::map<std::pair<std::size_t, double>, double> out;
  for (const auto& [key, v] : acc) out[key] = v.first / static_cast<double>(v.second);
  return out;
}

}  // namespace lorafed
