#include "dbpmae/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace dbp {

namespace {

constexpr char kMagic[8] = {'D', 'B', 'P', 'C', 'K', 'P', 'T', '1'};
constexpr unsigned char kVersion = 1;

enum RecordKind : unsigned char { kTensor = 0, kBytes = 1, kU64List = 2 };

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& buf, float v) {
  static_assert(sizeof(float) == 4);
  char b[4];
  std::memcpy(b, &v, 4);  // host is little-endian; format pins LE
  buf.append(b, 4);
}

class Reader {
 public:
  explicit Reader(std::string bytes) : data_(std::move(bytes)) {}
  bool eof() const { return pos_ >= data_.size(); }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  unsigned char u8() {
    need(1);
    return static_cast<unsigned char>(data_[pos_++]);
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(size_t n) const {
    if (pos_ + n > data_.size())
      throw LengthMismatchError("checkpoint: truncated record stream");
  }
  std::string data_;
  size_t pos_ = 0;
};

void append_record(std::string& out, const std::string& name, RecordKind kind,
                   const std::string& payload) {
  put_u32(out, static_cast<uint32_t>(name.size()));
  out += name;
  out.push_back(static_cast<char>(kind));
  put_u64(out, payload.size());
  out += payload;
}

std::string tensor_payload(const double* data, long rows, long cols) {
  std::string p;
  if (cols > 0) {
    put_u32(p, 2);
    put_u32(p, static_cast<uint32_t>(rows));
    put_u32(p, static_cast<uint32_t>(cols));
  } else {
    put_u32(p, 1);
    put_u32(p, static_cast<uint32_t>(rows));
  }
  const long n = rows * std::max<long>(cols, 1);
  p.reserve(p.size() + static_cast<size_t>(n) * 4);
  for (long i = 0; i < n; ++i) put_f32(p, static_cast<float>(data[i]));
  return p;
}

std::string u64_payload(const std::vector<uint64_t>& values) {
  std::string p;
  for (uint64_t v : values) put_u64(p, v);
  return p;
}

struct RawRecord {
  RecordKind kind;
  std::string payload;
};

// Decoded tensor: dims + double data (converted up from f32).
struct TensorRecord {
  std::vector<uint32_t> dims;
  std::vector<double> data;
};

TensorRecord decode_tensor(const std::string& payload) {
  Reader r(payload);
  TensorRecord t;
  uint32_t rank = r.u32();
  if (rank == 0 || rank > 4) throw IoError("checkpoint: bad tensor rank");
  uint64_t n = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    t.dims.push_back(r.u32());
    n *= t.dims.back();
  }
  std::string raw = r.bytes(n * 4);
  t.data.resize(n);
  for (uint64_t i = 0; i < n; ++i) {
    float f;
    std::memcpy(&f, raw.data() + i * 4, 4);
    t.data[i] = static_cast<double>(f);
  }
  return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const MaeModel& model, const TrainConfig& config,
                     int epoch, bool fuse, const AdamW* optimizer,
                     std::array<uint64_t, 2> rng_state) {
  MaeModel snapshot = model;  // fusing must not disturb the live model
  if (fuse) snapshot.fuse_all();

  std::string out;
  out.append(kMagic, 8);
  out.push_back(static_cast<char>(kVersion));

  append_record(out, "meta:config", kBytes, serialize_config(config));
  append_record(out, "meta:epoch", kU64List, u64_payload({static_cast<uint64_t>(epoch)}));
  append_record(out, "meta:fused", kU64List, u64_payload({fuse ? uint64_t{1} : uint64_t{0}}));
  append_record(out, "rng:state", kU64List, u64_payload({rng_state[0], rng_state[1]}));

  for (const auto& p : snapshot.parameters())
    append_record(out, "param:" + p.name, kTensor, tensor_payload(p.value, p.rows, p.cols));

  if (!fuse) {
    for (const auto& site : snapshot.decorr_sites(DecorrScope::FullModel, true)) {
      if (!site.layer->decorr) continue;
      const auto& R = *site.layer->decorr;
      append_record(out, "R:" + R.site_id, kTensor,
                    tensor_payload(R.values.data(), R.dim, R.dim));
    }
  }

  if (optimizer) {
    append_record(out, "opt:step", kU64List,
                  u64_payload({static_cast<uint64_t>(optimizer->step_count())}));
    auto params = snapshot.parameters();
    const auto& m = optimizer->first_moments();
    const auto& v = optimizer->second_moments();
    if (m.size() != params.size())
      throw ShapeError("save_checkpoint: optimizer state does not match parameter list");
    for (size_t i = 0; i < params.size(); ++i) {
      append_record(out, "opt:m:" + params[i].name, kTensor,
                    tensor_payload(m[i].data(), m[i].size(), 0));
      append_record(out, "opt:v:" + params[i].name, kTensor,
                    tensor_payload(v[i].data(), v[i].size(), 0));
    }
  }

  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("save_checkpoint: cannot open '" + path + "'");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("save_checkpoint: write failed for '" + path + "'");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("load_checkpoint: cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  if (bytes.size() < 9 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw BadMagicError("load_checkpoint: '" + path + "' is not a DBPCKPT1 file");
  if (static_cast<unsigned char>(bytes[8]) != kVersion)
    throw IoError("load_checkpoint: unsupported version " +
                  std::to_string(static_cast<unsigned char>(bytes[8])));

  std::map<std::string, RawRecord> records;
  {
    Reader r(bytes.substr(9));
    while (!r.eof()) {
      uint32_t name_len = r.u32();
      std::string name = r.bytes(name_len);
      auto kind = static_cast<RecordKind>(r.u8());
      uint64_t payload_len = r.u64();
      records[name] = RawRecord{kind, r.bytes(payload_len)};
    }
  }

  auto require = [&](const std::string& name) -> const RawRecord& {
    auto it = records.find(name);
    if (it == records.end())
      throw IoError("load_checkpoint: missing record '" + name + "'");
    return it->second;
  };

  LoadedCheckpoint ck;
  ck.config = parse_config_text(require("meta:config").payload);
  {
    Reader r(require("meta:epoch").payload);
    ck.epoch = static_cast<int>(r.u64());
  }
  {
    Reader r(require("meta:fused").payload);
    ck.fused = r.u64() != 0;
  }
  {
    Reader r(require("rng:state").payload);
    ck.rng_state = {r.u64(), r.u64()};
  }

  ck.model = std::make_unique<MaeModel>(ck.config.mae, ck.config.seed);
  auto params = ck.model->parameters();
  for (auto& p : params) {
    auto it = records.find("param:" + p.name);
    if (it == records.end())
      throw IoError("load_checkpoint: missing parameter '" + p.name + "'");
    TensorRecord t = decode_tensor(it->second.payload);
    long n = 1;
    for (uint32_t d : t.dims) n *= d;
    if (n != p.size)
      throw IoError("load_checkpoint: shape mismatch for '" + p.name +
                    "' (checkpoint/config disagreement)");
    std::memcpy(p.value, t.data.data(), static_cast<size_t>(n) * sizeof(double));
  }

  if (!ck.fused) {
    auto sites = ck.model->decorr_sites(DecorrScope::FullModel, true);
    for (auto& site : sites) {
      auto it = records.find("R:" + site.name);
      if (it == records.end()) continue;
      TensorRecord t = decode_tensor(it->second.payload);
      const int dim = site.layer->in_dim();
      if (t.dims.size() != 2 || t.dims[0] != static_cast<uint32_t>(dim) ||
          t.dims[1] != static_cast<uint32_t>(dim))
        throw IoError("load_checkpoint: bad decorrelation matrix for site '" + site.name + "'");
      DecorrelationMatrix R(dim, site.name);
      std::memcpy(R.values.data(), t.data.data(), static_cast<size_t>(dim) * dim * sizeof(double));
      site.layer->decorr = std::move(R);
    }
  }

  if (records.count("opt:step")) {
    ck.has_optimizer = true;
    Reader r(records.at("opt:step").payload);
    ck.opt_step = static_cast<long>(r.u64());
    for (const auto& p : params) {
      TensorRecord m = decode_tensor(require("opt:m:" + p.name).payload);
      TensorRecord v = decode_tensor(require("opt:v:" + p.name).payload);
      if (static_cast<long>(m.data.size()) != p.size ||
          static_cast<long>(v.data.size()) != p.size)
        throw IoError("load_checkpoint: optimizer state mismatch for '" + p.name + "'");
      ck.opt_m.push_back(Eigen::Map<const Vector>(m.data.data(), p.size));
      ck.opt_v.push_back(Eigen::Map<const Vector>(v.data.data(), p.size));
    }
  }
  return ck;
}

}  // namespace dbp
