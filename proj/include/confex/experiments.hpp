#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "confex/datagen.hpp"
#include "confex/network.hpp"

namespace confex {

enum class SweepAxis { Delta, Bits };
enum class TableFormat { Csv, Markdown };

struct SweepSpec {
  SweepAxis axis = SweepAxis::Delta;
  std::vector<double> delta_values;  // used when axis == Delta
  std::vector<int> bit_values;       // used when axis == Bits; 0 = unquantized
  std::vector<Method> methods;
  int trials = 100;
  SynthConfig synth;       // delta overridden per axis value on a delta sweep
  EpisodeConfig episode;   // quant overridden per axis value on a bits sweep
  std::uint64_t master_seed = 0;
  int threads = 0;  // 0 = hardware concurrency
};

struct AggregateRow {
  std::string axis_label;
  Method method = Method::B2;
  double mean_fdr = 0.0;
  double std_fdr = 0.0;
  double mean_power = 0.0;
  double std_power = 0.0;
  double mean_comm_kb = 0.0;
  double std_comm_kb = 0.0;
  int trials = 0;
};

// Called once per finished trial; may run on any worker thread.
using TrialObserver =
    std::function<void(const std::string& axis_label, Method, int trial, const TrialOutcome&)>;

namespace detail {

inline std::string format_axis_value(SweepAxis axis, double delta, int bits) {
  if (axis == SweepAxis::Bits) return bits == 0 ? "none" : std::to_string(bits);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", delta);
  return buf;
}

struct SweepTask {
  std::size_t row = 0;
  std::size_t value_index = 0;
  Method method = Method::B2;
  int trial = 0;
  double delta = 0.0;
  int bits = 0;
  std::string axis_label;
};

struct TrialStats {
  double fdp = 0.0;
  double power = 0.0;
  double comm_kb = 0.0;
};

inline void mean_std(std::span<const double> xs, double& mean, double& sd) {
  mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  sd = 0.0;
  if (xs.size() > 1) {
    double acc = 0.0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    sd = std::sqrt(acc / static_cast<double>(xs.size() - 1));
  }
}

inline bool is_exchange_method(Method m) {
  return m == Method::ModelExchange || m == Method::ConservativeExchange;
}

}  // namespace detail

// Seed for one (axis value, method, trial) cell. Methods hash in their own
// stable tag, so adding a method to a sweep never perturbs the others.
inline std::uint64_t trial_seed(std::uint64_t master, std::size_t value_index, Method method,
                                int trial) {
  return seed_chain(master, static_cast<std::uint64_t>(value_index), method_tag(method),
                    static_cast<std::uint64_t>(trial));
}

// Runs trials for every (axis value, method) cell and aggregates per-trial
// FDP, power, and communication into one row each. Rows come out in axis
// order then method order; on a bits sweep the methods that never exchange a
// model run once, ahead of the per-precision rows.
inline std::vector<AggregateRow> run_sweep(const SweepSpec& spec,
                                           const TrialObserver& observer = nullptr) {
  if (spec.trials < 1) throw std::invalid_argument("run_sweep: trials must be >= 1");
  if (spec.methods.empty()) throw std::invalid_argument("run_sweep: no methods");
  const bool bits_axis = spec.axis == SweepAxis::Bits;
  if (bits_axis ? spec.bit_values.empty() : spec.delta_values.empty()) {
    throw std::invalid_argument("run_sweep: no axis values");
  }

  // row plan
  std::vector<detail::SweepTask> row_proto;
  if (bits_axis) {
    for (Method m : spec.methods) {
      if (!detail::is_exchange_method(m)) {
        detail::SweepTask t;
        t.value_index = 0;
        t.method = m;
        t.delta = spec.synth.delta;
        t.bits = 0;
        t.axis_label = "-";
        row_proto.push_back(std::move(t));
      }
    }
    for (std::size_t vi = 0; vi < spec.bit_values.size(); ++vi) {
      for (Method m : spec.methods) {
        if (!detail::is_exchange_method(m)) continue;
        detail::SweepTask t;
        t.value_index = vi;
        t.method = m;
        t.delta = spec.synth.delta;
        t.bits = spec.bit_values[vi];
        t.axis_label = detail::format_axis_value(spec.axis, t.delta, t.bits);
        row_proto.push_back(std::move(t));
      }
    }
  } else {
    for (std::size_t vi = 0; vi < spec.delta_values.size(); ++vi) {
      for (Method m : spec.methods) {
        detail::SweepTask t;
        t.value_index = vi;
        t.method = m;
        t.delta = spec.delta_values[vi];
        t.bits = detail::is_exchange_method(m) ? spec.episode.quant.bits : 0;
        t.axis_label = detail::format_axis_value(spec.axis, t.delta, t.bits);
        row_proto.push_back(std::move(t));
      }
    }
  }

  std::vector<detail::SweepTask> tasks;
  tasks.reserve(row_proto.size() * static_cast<std::size_t>(spec.trials));
  for (std::size_t row = 0; row < row_proto.size(); ++row) {
    for (int trial = 0; trial < spec.trials; ++trial) {
      detail::SweepTask t = row_proto[row];
      t.row = row;
      t.trial = trial;
      tasks.push_back(std::move(t));
    }
  }

  std::vector<detail::TrialStats> stats(tasks.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::string failure;
  std::mutex failure_mutex;

  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size() || failed.load()) break;
      const detail::SweepTask& task = tasks[i];
      try {
        const std::uint64_t seed =
            trial_seed(spec.master_seed, task.value_index, task.method, task.trial);

        SynthConfig synth = spec.synth;
        synth.delta = task.delta;
        synth.seed = seed_chain(seed, 1);

        EpisodeConfig episode = spec.episode;
        episode.method = task.method;
        episode.seed = seed_chain(seed, 2);
        episode.quant.bits = detail::is_exchange_method(task.method) ? task.bits : 0;

        const TrialOutcome outcome = run_episode(episode, generate(synth));
        stats[i].fdp = outcome.global.fdp.to_double();
        stats[i].power = outcome.global.power.to_double();
        stats[i].comm_kb = static_cast<double>(outcome.ledger.total_bytes()) / 1000.0;
        if (observer) observer(task.axis_label, task.method, task.trial, outcome);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        failed.store(true);
        if (failure.empty()) {
          failure = std::string("trial failed (axis ") + task.axis_label + ", method " +
                    method_name(task.method) + ", trial " + std::to_string(task.trial) +
                    "): " + e.what();
        }
        break;
      }
    }
  };

  unsigned n_threads = spec.threads > 0 ? static_cast<unsigned>(spec.threads)
                                        : std::max(1u, std::thread::hardware_concurrency());
  n_threads = std::min<unsigned>(n_threads, static_cast<unsigned>(tasks.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failed.load()) throw std::runtime_error("run_sweep: " + failure);

  std::vector<AggregateRow> rows;
  rows.reserve(row_proto.size());
  for (std::size_t row = 0; row < row_proto.size(); ++row) {
    std::vector<double> fdp, power, comm;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (tasks[i].row != row) continue;
      fdp.push_back(stats[i].fdp);
      power.push_back(stats[i].power);
      comm.push_back(stats[i].comm_kb);
    }
    AggregateRow r;
    r.axis_label = row_proto[row].axis_label;
    r.method = row_proto[row].method;
    r.trials = spec.trials;
    detail::mean_std(fdp, r.mean_fdr, r.std_fdr);
    detail::mean_std(power, r.mean_power, r.std_power);
    detail::mean_std(comm, r.mean_comm_kb, r.std_comm_kb);
    rows.push_back(std::move(r));
  }
  return rows;
}

// Deterministic text rendering. CSV keeps six decimals for byte-stable
// reproducibility checks; markdown mirrors the paper's table style with
// two-decimal rates and one-decimal kilobytes.
inline std::string emit_table(std::span<const AggregateRow> rows, TableFormat format) {
  if (rows.empty()) throw std::invalid_argument("emit_table: no rows");
  std::string out;
  char buf[256];
  if (format == TableFormat::Csv) {
    out += "# fdr: mean of per-trial FDP over trials; std: sample standard deviation\n";
    out += "# comm unit: kilobyte = 1000 bytes\n";
    out += "axis,method,mean_fdr,std_fdr,mean_power,std_power,mean_comm_kb,std_comm_kb,trials\n";
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%d\n",
                    r.axis_label.c_str(), method_name(r.method), r.mean_fdr, r.std_fdr,
                    r.mean_power, r.std_power, r.mean_comm_kb, r.std_comm_kb, r.trials);
      out += buf;
    }
  } else {
    out += "| axis | method | fdr | power | comm (kb) | trials |\n";
    out += "|---|---|---|---|---|---|\n";
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf),
                    "| %s | %s | %.2f ± %.2f | %.2f ± %.2f | %.1f ± %.1f | %d |\n",
                    r.axis_label.c_str(), method_name(r.method), r.mean_fdr, r.std_fdr,
                    r.mean_power, r.std_power, r.mean_comm_kb, r.std_comm_kb, r.trials);
      out += buf;
    }
  }
  return out;
}

}  // namespace confex
