#include <cstring>
#include <map>
#include <set>

#include "scrl/binary.hpp"
#include "scrl/config.hpp"
#include "scrl/errors.hpp"
#include "scrl/fileio.hpp"
#include "scrl/trainer.hpp"

namespace scrl {

namespace {

constexpr char kMagic[4] = {'S', 'C', 'R', 'L'};
constexpr std::uint32_t kVersion = 1;

enum class Tag : std::uint32_t { kF32 = 1, kF64 = 2, kU8 = 3, kU64 = 4 };

std::size_t tag_size(Tag t) {
  switch (t) {
    case Tag::kF32: return 4;
    case Tag::kF64: return 8;
    case Tag::kU8: return 1;
    case Tag::kU64: return 8;
  }
  return 0;
}

const char* tag_name(Tag t) {
  switch (t) {
    case Tag::kF32: return "f32";
    case Tag::kF64: return "f64";
    case Tag::kU8: return "u8";
    case Tag::kU64: return "u64";
  }
  return "?";
}

struct Section {
  Tag tag = Tag::kU8;
  Shape dims;
  std::span<const std::uint8_t> payload;
  std::size_t offset = 0;  // of the section header
};

class SectionWriter {
 public:
  void add(const std::string& name, Tag tag, const Shape& dims, std::span<const std::uint8_t> raw) {
    w_.pod<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w_.text(name);
    w_.pod<std::uint32_t>(static_cast<std::uint32_t>(tag));
    w_.pod<std::uint32_t>(static_cast<std::uint32_t>(dims.size()));
    for (std::size_t d : dims) w_.pod<std::uint64_t>(d);
    w_.bytes(raw);
    ++count_;
  }
  void f32(const std::string& name, const Tensor<float>& t) {
    add(name, Tag::kF32, t.shape(), as_bytes(t.data()));
  }
  void f64(const std::string& name, const Shape& dims, std::span<const double> v) {
    add(name, Tag::kF64, dims, as_bytes(v));
  }
  void u64(const std::string& name, std::uint64_t v) {
    add(name, Tag::kU64, Shape{1}, as_bytes(std::span<const std::uint64_t>(&v, 1)));
  }
  void text(const std::string& name, const std::string& s) {
    add(name, Tag::kU8, Shape{s.size()},
        std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  }

  std::vector<std::uint8_t> finish() {
    ByteWriter out;
    out.bytes(std::span(reinterpret_cast<const std::uint8_t*>(kMagic), 4));
    out.pod<std::uint32_t>(kVersion);
    out.pod<std::uint32_t>(count_);
    out.bytes(w_.buffer());
    out.seal();
    return std::move(out.buffer());
  }

 private:
  template <typename T>
  static std::span<const std::uint8_t> as_bytes(std::span<const T> v) {
    return std::span(reinterpret_cast<const std::uint8_t*>(v.data()), v.size_bytes());
  }

  ByteWriter w_;
  std::uint32_t count_ = 0;
};

class SectionTable {
 public:
  explicit SectionTable(std::span<const std::uint8_t> bytes) : bytes_(bytes) {
    ByteReader r(bytes, "checkpoint");
    const std::string magic = r.text(4, "magic");
    if (magic != std::string(kMagic, 4)) r.fail("bad magic, not a checkpoint file", 0);
    const auto version = r.pod<std::uint32_t>("version");
    if (version != kVersion) {
      r.fail("unsupported format version " + std::to_string(version) + " (expected " +
                 std::to_string(kVersion) + ")",
             4);
    }
    const auto count = r.pod<std::uint32_t>("section count");
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::size_t at = r.offset();
      const std::string label = "section " + std::to_string(i);
      const auto name_len = r.pod<std::uint32_t>((label + " name length").c_str());
      const std::string name = r.text(name_len, (label + " name").c_str());
      const std::string ctx = "section '" + name + "'";
      Section s;
      s.offset = at;
      const auto tag = r.pod<std::uint32_t>((ctx + " dtype").c_str());
      if (tag < 1 || tag > 4) r.fail(ctx + ": unknown dtype " + std::to_string(tag), at);
      s.tag = static_cast<Tag>(tag);
      const auto rank = r.pod<std::uint32_t>((ctx + " rank").c_str());
      if (rank > 8) r.fail(ctx + ": implausible rank " + std::to_string(rank), at);
      std::size_t count_values = 1;
      for (std::uint32_t d = 0; d < rank; ++d) {
        const auto dim = r.pod<std::uint64_t>((ctx + " dims").c_str());
        s.dims.push_back(static_cast<std::size_t>(dim));
        count_values *= static_cast<std::size_t>(dim);
      }
      const std::size_t n = count_values * tag_size(s.tag);
      if (count_values != 0 && n / tag_size(s.tag) != count_values) {
        r.fail(ctx + ": payload size overflows", at);
      }
      r.need(n, (ctx + " payload").c_str());
      s.payload = bytes.subspan(r.offset(), n);
      r.text(n, (ctx + " payload").c_str());
      if (!sections_.emplace(name, s).second) r.fail("duplicate " + ctx, at);
      order_.push_back(name);
    }
    const std::size_t crc_at = r.offset();
    const auto stored = r.pod<std::uint32_t>("CRC32");
    if (r.remaining() != 0) r.fail("trailing bytes after CRC32", r.offset());
    if (crc32_of(bytes.first(crc_at)) != stored) r.fail("CRC32 mismatch", crc_at);
  }

  const Section& get(const std::string& name, Tag tag) const {
    auto it = sections_.find(name);
    if (it == sections_.end()) throw FormatError("checkpoint: missing section '" + name + "'");
    if (it->second.tag != tag) {
      throw FormatError("checkpoint: section '" + name + "' has dtype " +
                            tag_name(it->second.tag) + ", expected " + tag_name(tag),
                        it->second.offset);
    }
    used_.insert(name);
    return it->second;
  }

  void fill(const std::string& name, Tensor<float>& dst) const {
    const Section& s = get(name, Tag::kF32);
    if (s.dims != dst.shape()) {
      throw FormatError("checkpoint: section '" + name + "' has shape " + shape_str(s.dims) +
                            ", model expects " + shape_str(dst.shape()),
                        s.offset);
    }
    std::memcpy(dst.data().data(), s.payload.data(), s.payload.size());
  }

  std::uint64_t u64(const std::string& name) const {
    const Section& s = get(name, Tag::kU64);
    if (s.payload.size() != 8) {
      throw FormatError("checkpoint: section '" + name + "' must hold one u64", s.offset);
    }
    std::uint64_t v;
    std::memcpy(&v, s.payload.data(), 8);
    return v;
  }

  std::string text(const std::string& name) const {
    const Section& s = get(name, Tag::kU8);
    return std::string(reinterpret_cast<const char*>(s.payload.data()), s.payload.size());
  }

  std::vector<double> f64(const std::string& name, Shape& dims) const {
    const Section& s = get(name, Tag::kF64);
    dims = s.dims;
    std::vector<double> v(s.payload.size() / 8);
    std::memcpy(v.data(), s.payload.data(), s.payload.size());
    return v;
  }

  void require_all_used() const {
    for (const auto& name : order_) {
      if (!used_.count(name)) {
        throw FormatError("checkpoint: unexpected section '" + name + "'",
                          sections_.at(name).offset);
      }
    }
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::map<std::string, Section> sections_;
  std::vector<std::string> order_;
  mutable std::set<std::string> used_;
};

constexpr std::size_t kHistoryFields = 6;

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  Model& m = const_cast<Model&>(ck.model);  // tensors are only read
  const auto params = trainable_params(m);
  const auto frozen = frozen_params(m);
  if (ck.optimizer.slots.size() != params.size()) {
    throw ContractError("checkpoint: optimizer state does not match the model");
  }
  SectionWriter w;
  w.text("config", format_config(ck.config));
  w.u64("state.classes", m.classes());
  w.u64("state.epoch", ck.epoch);
  w.u64("state.stall_epochs", ck.stall_epochs);
  w.u64("state.converged", ck.converged ? 1 : 0);
  w.text("state.rng", ck.rng_state);
  std::vector<double> hist;
  for (const auto& h : ck.history) {
    hist.insert(hist.end(), {static_cast<double>(h.epoch), h.loss, h.pair, h.intra, h.inter, h.cls});
  }
  w.f64("state.history", Shape{ck.history.size(), kHistoryFields}, hist);
  for (const auto& p : frozen) w.f32("frozen." + p.name, *p.tensor);
  for (const auto& p : params) w.f32("param." + p.name, *p.tensor);
  for (std::size_t k = 0; k < params.size(); ++k) {
    w.f32("optim." + params[k].name + ".cache", ck.optimizer.slots[k].cache);
    w.f32("optim." + params[k].name + ".velocity", ck.optimizer.slots[k].velocity);
  }
  return w.finish();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  const SectionTable t(bytes);
  Checkpoint ck;
  try {
    apply_config(ck.config, parse_key_values(t.text("config")));
    ck.config.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: section 'config': ") + e.what());
  } catch (const ContractError& e) {
    throw FormatError(std::string("checkpoint: section 'config': ") + e.what());
  }
  const std::uint64_t classes = t.u64("state.classes");
  if (classes == 0 || classes > (1u << 20)) {
    throw FormatError("checkpoint: section 'state.classes' holds " + std::to_string(classes));
  }
  ck.model = model_skeleton(ck.config, static_cast<std::size_t>(classes));
  ck.epoch = static_cast<std::size_t>(t.u64("state.epoch"));
  ck.stall_epochs = static_cast<std::size_t>(t.u64("state.stall_epochs"));
  ck.converged = t.u64("state.converged") != 0;
  ck.rng_state = t.text("state.rng");
  Shape hdims;
  const auto hist = t.f64("state.history", hdims);
  if (hdims.size() != 2 || hdims[1] != kHistoryFields) {
    throw FormatError("checkpoint: section 'state.history' has shape " + shape_str(hdims));
  }
  for (std::size_t r = 0; r < hdims[0]; ++r) {
    const double* h = hist.data() + r * kHistoryFields;
    ck.history.push_back({static_cast<std::size_t>(h[0]), h[1], h[2], h[3], h[4], h[5]});
  }
  for (const auto& p : frozen_params(ck.model)) t.fill("frozen." + p.name, *p.tensor);
  const auto params = trainable_params(ck.model);
  for (const auto& p : params) t.fill("param." + p.name, *p.tensor);
  ck.optimizer = make_optimizer_state<float>(params);
  for (std::size_t k = 0; k < params.size(); ++k) {
    t.fill("optim." + params[k].name + ".cache", ck.optimizer.slots[k].cache);
    t.fill("optim." + params[k].name + ".velocity", ck.optimizer.slots[k].velocity);
  }
  t.require_all_used();
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace scrl
