#include "icpo/micro_policy.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "icpo/rng.hpp"

namespace icpo {

PolicyCheckpoint init_checkpoint(const PolicyArch& arch, uint64_t rng_seed) {
  PolicyCheckpoint ckpt;
  ckpt.arch = arch;
  ckpt.version = 0;
  ckpt.params.resize(arch.param_count());
  const double scale = 1.0 / std::sqrt(static_cast<double>(arch.d_model));
  Rng rng(derive_seed(rng_seed, Stream::init));
  for (double& p : ckpt.params) p = (2.0 * rng.uniform01() - 1.0) * scale;
  return ckpt;
}

double token_entropy(const TokenDistribution& dist) {
  double h = 0.0;
  for (double p : dist.probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

TokenDistribution next_token_distribution(const PolicyCheckpoint& ckpt, const TokenSeq& context,
                                          double temperature) {
  if (context.empty()) throw SizeError("context must be non-empty");
  ValueTape engine(ckpt.params);
  PolicyEval<ValueTape> eval(ckpt.arch, engine, temperature);
  Ref scaled = 0;
  for (size_t i = 0; i < context.size(); ++i) {
    scaled = eval.feed(context[i], i + 1 == context.size());
  }
  const SoftmaxRefs sm = eval.softmax(scaled);
  TokenDistribution dist;
  eval.probabilities(sm, dist.probs);
  return dist;
}

std::vector<double> sequence_logprobs(const PolicyCheckpoint& ckpt, const TokenSeq& context,
                                      const TokenSeq& generated, double temperature) {
  if (context.empty()) throw SizeError("context must be non-empty");
  ValueTape engine(ckpt.params);
  PolicyEval<ValueTape> eval(ckpt.arch, engine, temperature);
  Ref scaled = 0;
  for (size_t i = 0; i < context.size(); ++i) {
    scaled = eval.feed(context[i], i + 1 == context.size());
  }
  std::vector<double> out;
  out.reserve(generated.size());
  for (size_t t = 0; t < generated.size(); ++t) {
    const SoftmaxRefs sm = eval.softmax(scaled);
    const Ref lp = eval.pick_logprob(scaled, sm, generated[t]);
    out.push_back(engine.value(lp));
    if (t + 1 < generated.size()) scaled = eval.feed(generated[t], true);
  }
  return out;
}

std::vector<double> loss_gradient(const PolicyCheckpoint& ckpt, Tape& tape, Ref loss) {
  if (!std::isfinite(tape.value(loss))) {
    throw NumericalError("loss is not finite: " + std::to_string(tape.value(loss)));
  }
  std::vector<double> grads(ckpt.params.size(), 0.0);
  tape.backward(loss, grads);
  return grads;
}

// ---- persistence ----

namespace {

constexpr char kMagic[8] = {'I', 'C', 'P', 'O', 'C', 'K', 'P', '1'};

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint32_t get_u32(std::span<const uint8_t> bytes, size_t& offset) {
  if (offset + 4 > bytes.size()) throw IoError("checkpoint truncated");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[offset + i]) << (8 * i);
  offset += 4;
  return v;
}

uint64_t get_u64(std::span<const uint8_t> bytes, size_t& offset) {
  if (offset + 8 > bytes.size()) throw IoError("checkpoint truncated");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[offset + i]) << (8 * i);
  offset += 8;
  return v;
}

}  // namespace

void append_checkpoint_bytes(const PolicyCheckpoint& ckpt, std::vector<uint8_t>& out) {
  out.insert(out.end(), kMagic, kMagic + sizeof(kMagic));
  put_u32(out, static_cast<uint32_t>(ckpt.arch.vocab_size));
  put_u32(out, static_cast<uint32_t>(ckpt.arch.d_model));
  put_u32(out, static_cast<uint32_t>(ckpt.arch.max_context));
  put_u64(out, ckpt.version);
  put_u64(out, static_cast<uint64_t>(ckpt.params.size()));
  for (double p : ckpt.params) {
    uint64_t bits;
    std::memcpy(&bits, &p, sizeof(bits));
    put_u64(out, bits);
  }
}

PolicyCheckpoint read_checkpoint_bytes(std::span<const uint8_t> bytes, size_t& offset) {
  if (offset + sizeof(kMagic) > bytes.size() ||
      std::memcmp(bytes.data() + offset, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("bad checkpoint magic");
  }
  offset += sizeof(kMagic);
  PolicyCheckpoint ckpt;
  ckpt.arch.vocab_size = static_cast<int>(get_u32(bytes, offset));
  ckpt.arch.d_model = static_cast<int>(get_u32(bytes, offset));
  ckpt.arch.max_context = static_cast<int>(get_u32(bytes, offset));
  ckpt.version = get_u64(bytes, offset);
  const uint64_t count = get_u64(bytes, offset);
  if (count != ckpt.arch.param_count()) {
    throw IoError("checkpoint parameter count does not match its architecture");
  }
  ckpt.params.resize(count);
  for (uint64_t i = 0; i < count; ++i) {
    const uint64_t bits = get_u64(bytes, offset);
    std::memcpy(&ckpt.params[i], &bits, sizeof(double));
  }
  return ckpt;
}

void save_checkpoint(const PolicyCheckpoint& ckpt, const std::string& path) {
  std::vector<uint8_t> bytes;
  bytes.reserve(32 + ckpt.params.size() * 8);
  append_checkpoint_bytes(ckpt, bytes);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

PolicyCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  size_t offset = 0;
  PolicyCheckpoint ckpt = read_checkpoint_bytes(bytes, offset);
  if (offset != bytes.size()) throw IoError("trailing bytes in checkpoint '" + path + "'");
  return ckpt;
}

}  // namespace icpo
