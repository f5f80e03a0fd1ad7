#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "confex/forest.hpp"

namespace confex {

// Requested transmission precision. bits == 0 sends raw 64-bit reals.
struct QuantSpec {
  int bits = 0;

  bool quantized() const { return bits != 0; }
};

inline constexpr int kMaxQuantBits = 16;

class CorruptPayloadError : public std::runtime_error {
 public:
  CorruptPayloadError(const std::string& what, std::size_t position)
      : std::runtime_error(what + " (at byte " + std::to_string(position) + ")"),
        position_(position) {}

  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

// Transmissible surrogate of a score model: tree topology and split features
// at native integer width, real parameters reduced to b-bit codes on a
// per-model affine grid. bits == 0 keeps the raw reals (the unquantized
// exchange baseline).
struct QuantizedModel {
  struct NodeRec {
    std::uint16_t feature = kLeafSentinel;
    std::uint16_t left = 0;
    std::uint16_t right = 0;

    friend bool operator==(const NodeRec&, const NodeRec&) = default;
  };

  std::uint8_t learner_id = kLearnerRandomForest;
  std::uint8_t bits = 0;
  std::vector<std::vector<NodeRec>> trees;
  double scale = 1.0;   // grid step
  double offset = 0.0;  // grid origin (minimum parameter)
  std::vector<std::uint32_t> codes;   // used when bits > 0
  std::vector<double> raw_params;     // used when bits == 0

  std::size_t param_count() const { return bits == 0 ? raw_params.size() : codes.size(); }

  friend bool operator==(const QuantizedModel&, const QuantizedModel&) = default;
};

namespace detail {

// nearest grid code with exact halves resolved toward the lower code
inline std::uint32_t nearest_code(double value, double offset, double step, std::uint32_t max_code) {
  double pos = (value - offset) / step;
  double code = std::ceil(pos - 0.5);
  if (code < 0.0) return 0;
  if (code > static_cast<double>(max_code)) return max_code;
  return static_cast<std::uint32_t>(code);
}

inline void gather_params(const RandomForest& model, std::vector<double>& out) {
  out.clear();
  for (const auto& tree : model.trees) {
    for (const auto& node : tree.nodes) out.push_back(node.param);
  }
}

inline void gather_structure(const RandomForest& model,
                             std::vector<std::vector<QuantizedModel::NodeRec>>& out) {
  out.clear();
  out.reserve(model.trees.size());
  for (const auto& tree : model.trees) {
    auto& recs = out.emplace_back();
    recs.reserve(tree.nodes.size());
    for (const auto& node : tree.nodes) {
      recs.push_back({node.feature, node.left, node.right});
    }
  }
}

}  // namespace detail

// Affine uniform quantization over the model's full real-parameter vector
// (split thresholds and leaf values pooled): levels offset + i*scale for
// i in [0, 2^b). Deterministic: same model and spec, same payload.
inline QuantizedModel quantize_model(const RandomForest& model, const QuantSpec& spec) {
  if (spec.bits < 1 || spec.bits > kMaxQuantBits) {
    throw std::invalid_argument("quantize_model: bits must lie in [1, 16]");
  }
  std::vector<double> params;
  detail::gather_params(model, params);
  if (params.empty()) throw std::invalid_argument("quantize_model: model has no parameters");

  const auto [lo_it, hi_it] = std::minmax_element(params.begin(), params.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  const std::uint32_t max_code = static_cast<std::uint32_t>((1u << spec.bits) - 1);
  const double step = hi > lo ? (hi - lo) / static_cast<double>(max_code) : 1.0;

  QuantizedModel qm;
  qm.learner_id = model.learner_id;
  qm.bits = static_cast<std::uint8_t>(spec.bits);
  qm.scale = step;
  qm.offset = lo;
  detail::gather_structure(model, qm.trees);
  qm.codes.reserve(params.size());
  for (double v : params) qm.codes.push_back(detail::nearest_code(v, lo, step, max_code));
  return qm;
}

// Raw-precision packing for spec.bits == 0; same wire envelope, f64 payload.
inline QuantizedModel pack_unquantized(const RandomForest& model) {
  QuantizedModel qm;
  qm.learner_id = model.learner_id;
  qm.bits = 0;
  detail::gather_structure(model, qm.trees);
  detail::gather_params(model, qm.raw_params);
  if (qm.raw_params.empty()) throw std::invalid_argument("pack_unquantized: model has no parameters");
  return qm;
}

inline QuantizedModel pack_model(const RandomForest& model, const QuantSpec& spec) {
  return spec.quantized() ? quantize_model(model, spec) : pack_unquantized(model);
}

// Reconstructs an evaluatable model from the transmitted surrogate; decoded
// parameters are the grid levels offset + code*scale.
inline RandomForest dequantize(const QuantizedModel& qm) {
  RandomForest model;
  model.learner_id = qm.learner_id;
  model.dim = 0;  // wire format carries no declared width; accept any wide-enough point
  model.train_seed = 0;
  model.trees.reserve(qm.trees.size());
  std::size_t p = 0;
  for (const auto& recs : qm.trees) {
    Tree tree;
    tree.nodes.reserve(recs.size());
    for (const auto& rec : recs) {
      TreeNode node;
      node.feature = rec.feature;
      node.left = rec.left;
      node.right = rec.right;
      node.param = qm.bits == 0 ? qm.raw_params[p]
                                : qm.offset + static_cast<double>(qm.codes[p]) * qm.scale;
      ++p;
      tree.nodes.push_back(node);
    }
    model.trees.push_back(std::move(tree));
  }
  if (p != qm.param_count()) {
    throw std::invalid_argument("dequantize: parameter count does not match structure");
  }
  model.refresh_required_dim();
  return model;
}

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xFF));
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }

  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  [[noreturn]] void fail(const std::string& what) const { throw CorruptPayloadError(what, pos_); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw CorruptPayloadError("truncated payload", pos_);
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline constexpr char kWireMagic[4] = {'Q', 'M', 'X', '1'};
inline constexpr std::uint8_t kWireVersion = 1;

// Wire layout, little-endian:
//   magic "QMX1" | version u8 | learner_id u8 | bits u8 (0 = raw f64)
//   | tree_count u16
//   | per tree: node_count u16, node records (feature u16, left u16,
//     right u16; feature 0xFFFF flags a leaf)
//   | scale f64 | offset f64 | param_count u32
//   | codes packed LSB-first, param_count*bits bits zero-padded to a byte
//     boundary, or param_count raw f64 when bits == 0.
inline std::vector<std::uint8_t> serialize(const QuantizedModel& qm) {
  if (qm.trees.size() > 0xFFFF) throw std::invalid_argument("serialize: too many trees");
  std::vector<std::uint8_t> out;
  out.insert(out.end(), std::begin(kWireMagic), std::end(kWireMagic));
  out.push_back(kWireVersion);
  out.push_back(qm.learner_id);
  out.push_back(qm.bits);
  detail::put_u16(out, static_cast<std::uint16_t>(qm.trees.size()));
  for (const auto& recs : qm.trees) {
    if (recs.empty() || recs.size() > 0xFFFF) {
      throw std::invalid_argument("serialize: tree node count out of range");
    }
    detail::put_u16(out, static_cast<std::uint16_t>(recs.size()));
    for (const auto& rec : recs) {
      detail::put_u16(out, rec.feature);
      detail::put_u16(out, rec.left);
      detail::put_u16(out, rec.right);
    }
  }
  detail::put_f64(out, qm.scale);
  detail::put_f64(out, qm.offset);
  detail::put_u32(out, static_cast<std::uint32_t>(qm.param_count()));
  if (qm.bits == 0) {
    for (double v : qm.raw_params) detail::put_f64(out, v);
  } else {
    std::uint64_t acc = 0;
    int filled = 0;
    for (std::uint32_t code : qm.codes) {
      acc |= static_cast<std::uint64_t>(code) << filled;
      filled += qm.bits;
      while (filled >= 8) {
        out.push_back(static_cast<std::uint8_t>(acc & 0xFF));
        acc >>= 8;
        filled -= 8;
      }
    }
    if (filled > 0) out.push_back(static_cast<std::uint8_t>(acc & 0xFF));
  }
  return out;
}

inline QuantizedModel deserialize(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  for (char expect : kWireMagic) {
    if (static_cast<char>(r.u8()) != expect) {
      throw CorruptPayloadError("bad magic", 0);
    }
  }
  if (r.u8() != kWireVersion) throw CorruptPayloadError("unsupported version", r.pos() - 1);

  QuantizedModel qm;
  qm.learner_id = r.u8();
  qm.bits = r.u8();
  if (qm.bits > kMaxQuantBits) throw CorruptPayloadError("bits out of range", r.pos() - 1);

  const std::uint16_t tree_count = r.u16();
  qm.trees.resize(tree_count);
  std::size_t total_nodes = 0;
  for (auto& recs : qm.trees) {
    const std::uint16_t node_count = r.u16();
    if (node_count == 0) r.fail("empty tree");
    recs.resize(node_count);
    for (std::size_t i = 0; i < node_count; ++i) {
      recs[i].feature = r.u16();
      recs[i].left = r.u16();
      recs[i].right = r.u16();
      if (recs[i].feature == kLeafSentinel) {
        if (recs[i].left != 0 || recs[i].right != 0) r.fail("leaf with children");
      } else {
        // children strictly after the parent: walks terminate by construction
        if (recs[i].left <= i || recs[i].right <= i || recs[i].left >= node_count ||
            recs[i].right >= node_count) {
          r.fail("node child index out of order");
        }
      }
    }
    total_nodes += node_count;
  }

  qm.scale = r.f64();
  qm.offset = r.f64();
  if (!std::isfinite(qm.scale) || !std::isfinite(qm.offset)) {
    throw CorruptPayloadError("non-finite grid parameters", r.pos() - 8);
  }
  const std::uint32_t param_count = r.u32();
  if (param_count != total_nodes) r.fail("parameter count does not match structure");

  if (qm.bits == 0) {
    qm.raw_params.reserve(param_count);
    for (std::uint32_t i = 0; i < param_count; ++i) {
      double v = r.f64();
      if (!std::isfinite(v)) throw CorruptPayloadError("non-finite parameter", r.pos() - 8);
      qm.raw_params.push_back(v);
    }
  } else {
    const std::size_t payload_bytes =
        (static_cast<std::size_t>(param_count) * qm.bits + 7) / 8;
    if (r.remaining() < payload_bytes) r.fail("truncated code payload");
    qm.codes.reserve(param_count);
    std::uint64_t acc = 0;
    int filled = 0;
    const std::uint32_t mask = (1u << qm.bits) - 1;
    for (std::uint32_t i = 0; i < param_count; ++i) {
      while (filled < qm.bits) {
        acc |= static_cast<std::uint64_t>(r.u8()) << filled;
        filled += 8;
      }
      qm.codes.push_back(static_cast<std::uint32_t>(acc & mask));
      acc >>= qm.bits;
      filled -= qm.bits;
    }
    if (acc != 0) r.fail("nonzero padding bits");
  }
  if (r.remaining() != 0) r.fail("trailing bytes after payload");
  return qm;
}

// Serialized size in bytes; payload_size(serialize(qm)) == serialize(qm).size().
inline std::size_t payload_size(const QuantizedModel& qm) {
  std::size_t size = 4 + 1 + 1 + 1 + 2;  // magic, version, learner, bits, tree count
  for (const auto& recs : qm.trees) size += 2 + 6 * recs.size();
  size += 8 + 8 + 4;  // scale, offset, param count
  const std::size_t p = qm.param_count();
  size += qm.bits == 0 ? 8 * p : (p * qm.bits + 7) / 8;
  return size;
}

inline std::size_t payload_size(const RandomForest& model) {
  return payload_size(pack_unquantized(model));
}

// Bytes spent on the real-parameter payload alone, excluding structure.
inline std::size_t param_payload_bytes(const QuantizedModel& qm) {
  const std::size_t p = qm.param_count();
  return qm.bits == 0 ? 8 * p : (p * qm.bits + 7) / 8;
}

// Per-agent transfer totals, split by payload kind. Count-exchange traffic
// accrues in bits and is rounded up to bytes only when reporting, so one
// ledger entry never double-counts padding across rounds.
struct AgentLedger {
  std::int64_t model_bytes_sent = 0;
  std::int64_t model_bytes_recv = 0;
  std::int64_t count_bits_sent = 0;
  std::int64_t count_bits_recv = 0;

  std::int64_t count_bytes_sent() const { return (count_bits_sent + 7) / 8; }
  std::int64_t count_bytes_recv() const { return (count_bits_recv + 7) / 8; }
  std::int64_t total_bytes() const {
    return model_bytes_sent + model_bytes_recv + count_bytes_sent() + count_bytes_recv();
  }
};

struct CommLedger {
  std::vector<AgentLedger> agents;

  std::int64_t model_bytes() const {
    std::int64_t sum = 0;
    for (const auto& a : agents) sum += a.model_bytes_sent + a.model_bytes_recv;
    return sum;
  }

  std::int64_t count_bytes() const {
    std::int64_t sum = 0;
    for (const auto& a : agents) sum += a.count_bytes_sent() + a.count_bytes_recv();
    return sum;
  }

  std::int64_t total_bytes() const { return model_bytes() + count_bytes(); }
};

}  // namespace confex
