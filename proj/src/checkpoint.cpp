#include "ssrl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ssrl {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'R', 'L', 'C', 'K', 'P', '1'};
constexpr uint8_t kDtypeF64 = 1;

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(out, v);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}
  void need(size_t n) const {
    if (pos + n > buf.size()) throw std::runtime_error("checkpoint: truncated file");
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint8_t>(buf[pos]) | (static_cast<uint16_t>(static_cast<uint8_t>(buf[pos + 1])) << 8);
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() {
    uint64_t v = u64();
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
  std::string str(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void Checkpoint::save(const std::string& path) const {
  std::string out;
  out.append(kMagic, 8);
  put_u64(out, step);
  put_u64(out, config_text.size());
  out += config_text;
  put_u32(out, static_cast<uint32_t>(entries.size()));
  for (const Entry& e : entries) {
    put_u16(out, static_cast<uint16_t>(e.name.size()));
    out += e.name;
    out.push_back(static_cast<char>(kDtypeF64));
    out.push_back(static_cast<char>(e.shape.size()));
    for (int d : e.shape) put_u32(out, static_cast<uint32_t>(d));
    for (real v : e.data) put_f64(out, v);
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  Reader r(buf);
  if (r.str(8) != std::string(kMagic, 8))
    throw std::runtime_error("checkpoint: bad magic in " + path);
  Checkpoint ck;
  ck.step = r.u64();
  uint64_t clen = r.u64();
  ck.config_text = r.str(clen);
  uint32_t n = r.u32();
  ck.entries.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    Entry e;
    e.name = r.str(r.u16());
    uint8_t dtype = static_cast<uint8_t>(r.str(1)[0]);
    if (dtype != kDtypeF64)
      throw std::runtime_error("checkpoint: unsupported dtype " + std::to_string(dtype));
    uint8_t ndim = static_cast<uint8_t>(r.str(1)[0]);
    int64_t numel = 1;
    for (int d = 0; d < ndim; ++d) {
      e.shape.push_back(static_cast<int>(r.u32()));
      numel *= e.shape.back();
    }
    e.data.resize(static_cast<size_t>(numel));
    for (auto& v : e.data) v = r.f64();
    ck.entries.push_back(std::move(e));
  }
  return ck;
}

const Checkpoint::Entry* Checkpoint::find(const std::string& name) const {
  for (const Entry& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

int64_t Checkpoint::total_values() const {
  int64_t n = 0;
  for (const Entry& e : entries) n += static_cast<int64_t>(e.data.size());
  return n;
}

Checkpoint make_checkpoint(const NetworkPair& pair, const std::vector<ParamGroup>& opt_groups,
                           uint64_t step, const std::string& config_text) {
  Checkpoint ck;
  ck.step = step;
  ck.config_text = config_text;
  for (const ParamRef& p : pair.all_params())
    ck.entries.push_back({p.name, p.tensor.shape(), p.tensor.data()});
  for (const BufferRef& b : pair.all_buffers())
    ck.entries.push_back({b.name, {static_cast<int>(b.data->size())}, *b.data});
  for (const ParamGroup& g : opt_groups)
    ck.entries.push_back({"opt/momentum/" + g.name, g.param.shape(), g.momentum});
  return ck;
}

void restore_checkpoint(const Checkpoint& ck, NetworkPair& pair,
                        std::vector<ParamGroup>& opt_groups) {
  auto fetch = [&](const std::string& name, size_t want) -> const Checkpoint::Entry& {
    const Checkpoint::Entry* e = ck.find(name);
    if (e == nullptr) throw std::runtime_error("checkpoint: missing entry " + name);
    if (e->data.size() != want)
      throw std::runtime_error("checkpoint: shape mismatch for " + name + ": file has " +
                               std::to_string(e->data.size()) + " values, model wants " +
                               std::to_string(want));
    return *e;
  };
  for (ParamRef& p : pair.all_params())
    p.tensor.data() = fetch(p.name, p.tensor.data().size()).data;
  for (BufferRef& b : pair.all_buffers()) *b.data = fetch(b.name, b.data->size()).data;
  for (ParamGroup& g : opt_groups)
    g.momentum = fetch("opt/momentum/" + g.name, g.momentum.size()).data;
}

}  // namespace ssrl
