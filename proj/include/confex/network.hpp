#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "confex/conformal.hpp"
#include "confex/quantize.hpp"
#include "confex/rational.hpp"
#include "confex/rng.hpp"
#include "confex/scoring.hpp"

namespace confex {

enum class Method {
  B2,                    // zero communication: local BH at alpha/K
  B3,                    // limited communication: local models + FastLSU at alpha
  ModelExchange,         // block split, quantized surrogate exchange, FastLSU
  ConservativeExchange,  // unsplit broadcast, local BH at alpha/K
};

inline const char* method_name(Method m) {
  switch (m) {
    case Method::B2: return "B2";
    case Method::B3: return "B3";
    case Method::ModelExchange: return "ME";
    case Method::ConservativeExchange: return "ME-conservative";
  }
  return "?";
}

inline std::uint64_t method_tag(Method m) {
  switch (m) {
    case Method::B2: return 2;
    case Method::B3: return 3;
    case Method::ModelExchange: return 4;
    case Method::ConservativeExchange: return 5;
  }
  return 0;
}

class InsufficientDataError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EpisodeConfig {
  int K = 3;
  Rational alpha{1, 10};
  Method method = Method::ModelExchange;
  QuantSpec quant{};  // meaningful for the exchange methods only
  ForestConfig forest{};
  Rational train_fraction{1, 2};
  std::uint64_t seed = 0;
  bool capture_payloads = false;  // keep exchanged wire bytes for inspection
};

// One agent's K-way partition, by index into its own holdings. Block j is
// reserved for the owner's calibration and final test evaluation; block r
// trains the surrogate destined for agent r.
struct Block {
  std::vector<std::int64_t> null_ids;
  std::vector<std::int64_t> test_ids;
};

// Seeded shuffle, then round-robin deal starting at the reserved block, so
// any remainder lands there first and sizes differ by at most one.
inline std::vector<Block> split_blocks(std::int64_t n_nulls, std::int64_t n_tests, int K,
                                       int reserved, std::uint64_t seed) {
  if (K < 1) throw std::invalid_argument("split_blocks: K must be >= 1");
  if (reserved < 0 || reserved >= K) throw std::invalid_argument("split_blocks: reserved block out of range");
  if (n_nulls / K < 4 || n_tests / K < 1) {
    throw InsufficientDataError(
        "split_blocks: a K-way split cannot support train+calibration+test per block");
  }

  std::vector<std::int64_t> null_order(static_cast<std::size_t>(n_nulls));
  std::vector<std::int64_t> test_order(static_cast<std::size_t>(n_tests));
  std::iota(null_order.begin(), null_order.end(), 0);
  std::iota(test_order.begin(), test_order.end(), 0);
  Rng null_rng(seed_chain(seed, 0xB10Cull, 0));
  Rng test_rng(seed_chain(seed, 0xB10Cull, 1));
  null_rng.shuffle(null_order);
  test_rng.shuffle(test_order);

  std::vector<Block> blocks(static_cast<std::size_t>(K));
  for (std::size_t i = 0; i < null_order.size(); ++i) {
    blocks[(reserved + i) % static_cast<std::size_t>(K)].null_ids.push_back(null_order[i]);
  }
  for (std::size_t i = 0; i < test_order.size(); ++i) {
    blocks[(reserved + i) % static_cast<std::size_t>(K)].test_ids.push_back(test_order[i]);
  }
  return blocks;
}

struct TrialOutcome {
  std::vector<ErrorMetrics> per_agent;
  ErrorMetrics global;
  CommLedger ledger;
  std::vector<FastLsuRound> fastlsu_log;  // empty for the local-BH methods
  std::int64_t fastlsu_rounds = 0;
  std::int64_t max_agent_tests = 0;  // largest evaluated test count across agents

  // exchange accounting for the quantization sweep
  std::int64_t exchanged_payload_bytes = 0;        // full wire size of every sent model
  std::int64_t exchanged_param_payload_bytes = 0;  // real-parameter section only
  std::int64_t exchanged_param_count = 0;

  bool hygiene_ok = true;  // no reserved calibration/test point fed any exchanged model

  std::vector<std::vector<std::uint8_t>> captured_payloads;  // when requested
};

namespace detail {

struct AgentEval {
  PUDataset pu;
  RandomForest local_model;
  std::vector<RandomForest> surrogates;
  std::vector<std::int64_t> test_ids;  // original indices into AgentData.tests
};

// p-values for every evaluated test point, tagged with original identities.
inline PValueVector evaluate_agent(const AgentEval& eval, int agent_id) {
  const ScoredBlock scored = score_block(
      eval.local_model, std::span<const RandomForest>(eval.surrogates), eval.pu);
  PValueVector out;
  out.agent_id = agent_id;
  out.pvals = block_pvalues(scored);
  out.test_index = eval.test_ids;
  return out;
}

inline std::vector<std::vector<double>> gather_rows(const std::vector<std::vector<double>>& src,
                                                    const std::vector<std::int64_t>& ids) {
  std::vector<std::vector<double>> rows;
  rows.reserve(ids.size());
  for (std::int64_t id : ids) rows.push_back(src[static_cast<std::size_t>(id)]);
  return rows;
}

inline void charge_fastlsu(CommLedger& ledger, const std::vector<FastLsuRound>& log,
                           std::span<const std::int64_t> agent_test_counts) {
  const std::int64_t rounds = static_cast<std::int64_t>(log.size());
  std::int64_t total = 0;
  for (std::int64_t m : agent_test_counts) total += m;
  const std::int64_t recv_bits = ceil_log2(total + 1);
  for (std::size_t j = 0; j < agent_test_counts.size(); ++j) {
    ledger.agents[j].count_bits_sent += rounds * ceil_log2(agent_test_counts[j] + 1);
    ledger.agents[j].count_bits_recv += rounds * recv_bits;
  }
}

struct MetricsInput {
  std::vector<PValueVector> pvecs;
  std::vector<RejectionSet> per_agent_rejections;
  GroundTruth global_truth;
  std::vector<GroundTruth> per_agent_truth;
};

inline void finalize_metrics(TrialOutcome& out, const MetricsInput& in) {
  RejectionSet combined;
  out.per_agent.clear();
  for (std::size_t j = 0; j < in.per_agent_rejections.size(); ++j) {
    out.per_agent.push_back(score_metrics(in.per_agent_rejections[j], in.per_agent_truth[j]));
    for (const auto& r : in.per_agent_rejections[j].rejected) combined.rejected.push_back(r);
  }
  out.global = score_metrics(combined, in.global_truth);
}

}  // namespace detail

// Zero-communication baseline: every agent runs the full local pipeline on
// all of its data and tests at alpha/K; the union of the disjoint local
// rejection sets carries the global guarantee.
inline TrialOutcome run_b2(const EpisodeConfig& cfg, const std::vector<AgentData>& agents) {
  if (cfg.K < 1 || agents.size() != static_cast<std::size_t>(cfg.K)) {
    throw std::invalid_argument("run_b2: agent count does not match K");
  }
  TrialOutcome out;
  out.ledger.agents.resize(agents.size());
  const Rational local_alpha = cfg.alpha * Rational(1, cfg.K);

  detail::MetricsInput mi;
  for (int j = 0; j < cfg.K; ++j) {
    const auto& agent = agents[static_cast<std::size_t>(j)];
    PUDataset pu = build_pu_dataset(agent.train_nulls, agent.tests, cfg.train_fraction,
                                    seed_chain(cfg.seed, 0xB0ull, static_cast<std::uint64_t>(j)));
    RandomForest model = train_score_model(
        pu, cfg.forest, seed_chain(cfg.seed, 0xB0ull, static_cast<std::uint64_t>(j), 1));
    const ScoredBlock scored = score_block(model, {}, pu);
    const std::vector<Rational> pvals = block_pvalues(scored);

    RejectionSet rs;
    if (!pvals.empty()) {
      const BHResult bh = bh_procedure(pvals, local_alpha);
      rs.threshold = bh.threshold;
      for (std::size_t idx : bh.rejected) {
        rs.rejected.push_back({j, static_cast<std::int64_t>(idx)});
      }
    }
    mi.per_agent_rejections.push_back(std::move(rs));

    GroundTruth truth;
    for (std::size_t t = 0; t < agent.tests.size(); ++t) {
      truth.add(j, static_cast<std::int64_t>(t), agent.is_novelty[t] != 0);
      mi.global_truth.add(j, static_cast<std::int64_t>(t), agent.is_novelty[t] != 0);
    }
    mi.per_agent_truth.push_back(std::move(truth));
    out.max_agent_tests = std::max(out.max_agent_tests, static_cast<std::int64_t>(agent.tests.size()));
  }
  detail::finalize_metrics(out, mi);
  return out;
}

// Limited-communication baseline: local models and p-values as in B2, but the
// network synchronizes the exact pooled BH threshold at alpha through the
// count exchange.
inline TrialOutcome run_b3(const EpisodeConfig& cfg, const std::vector<AgentData>& agents) {
  if (cfg.K < 1 || agents.size() != static_cast<std::size_t>(cfg.K)) {
    throw std::invalid_argument("run_b3: agent count does not match K");
  }
  TrialOutcome out;
  out.ledger.agents.resize(agents.size());

  detail::MetricsInput mi;
  std::vector<std::int64_t> test_counts;
  for (int j = 0; j < cfg.K; ++j) {
    const auto& agent = agents[static_cast<std::size_t>(j)];
    PUDataset pu = build_pu_dataset(agent.train_nulls, agent.tests, cfg.train_fraction,
                                    seed_chain(cfg.seed, 0xB0ull, static_cast<std::uint64_t>(j)));
    RandomForest model = train_score_model(
        pu, cfg.forest, seed_chain(cfg.seed, 0xB0ull, static_cast<std::uint64_t>(j), 1));
    const ScoredBlock scored = score_block(model, {}, pu);

    PValueVector pv;
    pv.agent_id = j;
    pv.pvals = block_pvalues(scored);
    pv.test_index.resize(pv.pvals.size());
    std::iota(pv.test_index.begin(), pv.test_index.end(), 0);
    mi.pvecs.push_back(std::move(pv));

    GroundTruth truth;
    for (std::size_t t = 0; t < agent.tests.size(); ++t) {
      truth.add(j, static_cast<std::int64_t>(t), agent.is_novelty[t] != 0);
      mi.global_truth.add(j, static_cast<std::int64_t>(t), agent.is_novelty[t] != 0);
    }
    mi.per_agent_truth.push_back(std::move(truth));
    test_counts.push_back(static_cast<std::int64_t>(agent.tests.size()));
    out.max_agent_tests = std::max(out.max_agent_tests, test_counts.back());
  }

  const FastLsuResult fl = fastlsu(mi.pvecs, cfg.alpha);
  out.fastlsu_log = fl.log;
  out.fastlsu_rounds = static_cast<std::int64_t>(fl.log.size());
  if (cfg.K > 1) detail::charge_fastlsu(out.ledger, fl.log, test_counts);

  mi.per_agent_rejections.resize(static_cast<std::size_t>(cfg.K));
  for (auto& rs : mi.per_agent_rejections) rs.threshold = fl.rejections.threshold;
  for (const auto& r : fl.rejections.rejected) {
    mi.per_agent_rejections[static_cast<std::size_t>(r.agent_id)].rejected.push_back(r);
  }
  detail::finalize_metrics(out, mi);
  return out;
}

// Block-wise model exchange. Every agent splits its holdings K ways, trains
// one surrogate per peer on that peer's designated block, and ships only the
// quantized wire bytes. Test points in the reserved block are scored against
// the composite of the local model and every received surrogate, and the
// count exchange synchronizes the pooled BH threshold at full level alpha.
inline TrialOutcome run_model_exchange(const EpisodeConfig& cfg,
                                       const std::vector<AgentData>& agents) {
  if (cfg.K < 1 || agents.size() != static_cast<std::size_t>(cfg.K)) {
    throw std::invalid_argument("run_model_exchange: agent count does not match K");
  }
  const auto K = static_cast<std::size_t>(cfg.K);
  TrialOutcome out;
  out.ledger.agents.resize(K);

  std::vector<std::vector<Block>> blocks(K);
  for (std::size_t a = 0; a < K; ++a) {
    blocks[a] = split_blocks(static_cast<std::int64_t>(agents[a].train_nulls.size()),
                             static_cast<std::int64_t>(agents[a].tests.size()), cfg.K,
                             static_cast<int>(a), seed_chain(cfg.seed, 0x3A11ull, a));
  }

  std::vector<detail::AgentEval> evals(K);
  // identity sets for the data-hygiene audit: either side of every exchange
  std::vector<std::set<std::pair<std::size_t, std::int64_t>>> exchanged_train_ids(K);

  for (std::size_t a = 0; a < K; ++a) {
    for (std::size_t r = 0; r < K; ++r) {
      const Block& block = blocks[a][r];
      PUDataset pu = build_pu_dataset(detail::gather_rows(agents[a].train_nulls, block.null_ids),
                                      detail::gather_rows(agents[a].tests, block.test_ids),
                                      cfg.train_fraction, seed_chain(cfg.seed, 0x90ull, a, r));
      RandomForest model =
          train_score_model(pu, cfg.forest, seed_chain(cfg.seed, 0x91ull, a, r));
      if (r == a) {
        evals[a].local_model = std::move(model);
        evals[a].pu = std::move(pu);
        evals[a].test_ids = block.test_ids;
        continue;
      }

      // a -> r: models leave as wire bytes even in-process, so the ledger
      // records the true payload length
      const QuantizedModel qm = pack_model(model, cfg.quant);
      const std::vector<std::uint8_t> bytes = serialize(qm);
      out.ledger.agents[a].model_bytes_sent += static_cast<std::int64_t>(bytes.size());
      out.ledger.agents[r].model_bytes_recv += static_cast<std::int64_t>(bytes.size());
      out.exchanged_payload_bytes += static_cast<std::int64_t>(bytes.size());
      out.exchanged_param_payload_bytes += static_cast<std::int64_t>(param_payload_bytes(qm));
      out.exchanged_param_count += static_cast<std::int64_t>(qm.param_count());
      evals[r].surrogates.push_back(dequantize(deserialize(bytes)));
      if (cfg.capture_payloads) out.captured_payloads.push_back(bytes);

      for (std::int64_t id : block.null_ids) exchanged_train_ids[a].insert({a * 2, id});
      for (std::int64_t id : block.test_ids) exchanged_train_ids[a].insert({a * 2 + 1, id});
    }
  }

  // audit: a reserved calibration/test point may never have fed a model that
  // crossed the network
  for (std::size_t j = 0; j < K && out.hygiene_ok; ++j) {
    const Block& reserved = blocks[j][j];
    std::set<std::pair<std::size_t, std::int64_t>> reserved_eval_ids;
    for (std::size_t i = 0; i < evals[j].pu.roles.size(); ++i) {
      const MixRole& role = evals[j].pu.roles[i];
      if (role.is_test) {
        reserved_eval_ids.insert({j * 2 + 1, reserved.test_ids[static_cast<std::size_t>(role.orig_index)]});
      } else {
        reserved_eval_ids.insert({j * 2, reserved.null_ids[static_cast<std::size_t>(role.orig_index)]});
      }
    }
    for (const auto& id : reserved_eval_ids) {
      if (exchanged_train_ids[j].count(id) != 0) {
        out.hygiene_ok = false;
        break;
      }
    }
  }

  detail::MetricsInput mi;
  std::vector<std::int64_t> test_counts;
  for (std::size_t j = 0; j < K; ++j) {
    mi.pvecs.push_back(detail::evaluate_agent(evals[j], static_cast<int>(j)));
    GroundTruth truth;
    for (std::int64_t id : evals[j].test_ids) {
      const bool novel = agents[j].is_novelty[static_cast<std::size_t>(id)] != 0;
      truth.add(static_cast<int>(j), id, novel);
      mi.global_truth.add(static_cast<int>(j), id, novel);
    }
    mi.per_agent_truth.push_back(std::move(truth));
    test_counts.push_back(static_cast<std::int64_t>(evals[j].test_ids.size()));
    out.max_agent_tests = std::max(out.max_agent_tests, test_counts.back());
  }

  const FastLsuResult fl = fastlsu(mi.pvecs, cfg.alpha);
  out.fastlsu_log = fl.log;
  out.fastlsu_rounds = static_cast<std::int64_t>(fl.log.size());
  if (cfg.K > 1) detail::charge_fastlsu(out.ledger, fl.log, test_counts);

  mi.per_agent_rejections.resize(K);
  for (auto& rs : mi.per_agent_rejections) rs.threshold = fl.rejections.threshold;
  for (const auto& r : fl.rejections.rejected) {
    mi.per_agent_rejections[static_cast<std::size_t>(r.agent_id)].rejected.push_back(r);
  }
  detail::finalize_metrics(out, mi);
  return out;
}

// Conservative regime for data too sparse to split: each agent trains one
// model on everything it holds and broadcasts its quantized form. Because
// the broadcast models saw the broadcasters' own calibration and test data,
// the count exchange is off the table; agents fall back to local BH at
// alpha/K.
inline TrialOutcome run_conservative(const EpisodeConfig& cfg,
                                     const std::vector<AgentData>& agents) {
  if (cfg.K < 1 || agents.size() != static_cast<std::size_t>(cfg.K)) {
    throw std::invalid_argument("run_conservative: agent count does not match K");
  }
  const auto K = static_cast<std::size_t>(cfg.K);
  TrialOutcome out;
  out.ledger.agents.resize(K);
  const Rational local_alpha = cfg.alpha * Rational(1, cfg.K);

  std::vector<detail::AgentEval> evals(K);
  std::vector<QuantizedModel> packed(K);
  for (std::size_t j = 0; j < K; ++j) {
    evals[j].pu = build_pu_dataset(agents[j].train_nulls, agents[j].tests, cfg.train_fraction,
                                   seed_chain(cfg.seed, 0xC0ull, j));
    evals[j].local_model =
        train_score_model(evals[j].pu, cfg.forest, seed_chain(cfg.seed, 0xC1ull, j));
    evals[j].test_ids.resize(agents[j].tests.size());
    std::iota(evals[j].test_ids.begin(), evals[j].test_ids.end(), 0);
    packed[j] = pack_model(evals[j].local_model, cfg.quant);
  }

  for (std::size_t a = 0; a < K; ++a) {
    const std::vector<std::uint8_t> bytes = serialize(packed[a]);
    for (std::size_t r = 0; r < K; ++r) {
      if (r == a) continue;
      out.ledger.agents[a].model_bytes_sent += static_cast<std::int64_t>(bytes.size());
      out.ledger.agents[r].model_bytes_recv += static_cast<std::int64_t>(bytes.size());
      out.exchanged_payload_bytes += static_cast<std::int64_t>(bytes.size());
      out.exchanged_param_payload_bytes += static_cast<std::int64_t>(param_payload_bytes(packed[a]));
      out.exchanged_param_count += static_cast<std::int64_t>(packed[a].param_count());
      evals[r].surrogates.push_back(dequantize(deserialize(bytes)));
      if (cfg.capture_payloads) out.captured_payloads.push_back(bytes);
    }
  }

  detail::MetricsInput mi;
  for (std::size_t j = 0; j < K; ++j) {
    const PValueVector pv = detail::evaluate_agent(evals[j], static_cast<int>(j));

    RejectionSet rs;
    if (!pv.pvals.empty()) {
      const BHResult bh = bh_procedure(pv.pvals, local_alpha);
      rs.threshold = bh.threshold;
      for (std::size_t idx : bh.rejected) {
        rs.rejected.push_back({static_cast<int>(j), pv.test_index[idx]});
      }
    }
    mi.per_agent_rejections.push_back(std::move(rs));

    GroundTruth truth;
    for (std::size_t t = 0; t < agents[j].tests.size(); ++t) {
      const bool novel = agents[j].is_novelty[t] != 0;
      truth.add(static_cast<int>(j), static_cast<std::int64_t>(t), novel);
      mi.global_truth.add(static_cast<int>(j), static_cast<std::int64_t>(t), novel);
    }
    mi.per_agent_truth.push_back(std::move(truth));
    out.max_agent_tests =
        std::max(out.max_agent_tests, static_cast<std::int64_t>(agents[j].tests.size()));
  }
  detail::finalize_metrics(out, mi);
  return out;
}

inline TrialOutcome run_episode(const EpisodeConfig& cfg, const std::vector<AgentData>& agents) {
  if (cfg.quant.quantized() && (cfg.method == Method::B2 || cfg.method == Method::B3)) {
    throw std::invalid_argument("run_episode: quantization only applies to the exchange methods");
  }
  switch (cfg.method) {
    case Method::B2: return run_b2(cfg, agents);
    case Method::B3: return run_b3(cfg, agents);
    case Method::ModelExchange: return run_model_exchange(cfg, agents);
    case Method::ConservativeExchange: return run_conservative(cfg, agents);
  }
  throw std::invalid_argument("run_episode: unknown method");
}

}  // namespace confex
