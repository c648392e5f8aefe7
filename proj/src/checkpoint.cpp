#include "resablate/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <zlib.h>

namespace resablate {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

namespace {

constexpr std::uint8_t kFlagZeroed = 1;
constexpr std::uint8_t kFlagRemoved = 2;

struct Array {
  std::string name;
  std::array<std::uint32_t, 4> shape{};
  std::vector<float> values;
};

struct Record {
  std::string address;
  std::uint8_t flags = 0;
  std::vector<Array> arrays;
};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::size_t end) : bytes_(bytes), end_(end) {}
  template <typename T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void get_floats(float* dst, std::size_t n) {
    if (n > (end_ - pos_) / sizeof(float)) throw FormatError("checkpoint array exceeds file");
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw FormatError("checkpoint record runs past end of payload");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

Array make_array(std::string name, std::array<std::uint32_t, 4> shape, std::span<const float> v) {
  return {std::move(name), shape, std::vector<float>(v.begin(), v.end())};
}

Array vec_array(std::string name, std::span<const float> v) {
  return make_array(std::move(name), {static_cast<std::uint32_t>(v.size()), 1, 1, 1}, v);
}

void add_conv(Record& r, const ConvKernel<float>& k) {
  r.arrays.push_back(make_array("weight",
                                {static_cast<std::uint32_t>(k.out_channels),
                                 static_cast<std::uint32_t>(k.in_channels),
                                 static_cast<std::uint32_t>(k.kh), static_cast<std::uint32_t>(k.kw)},
                                k.weights));
  if (k.zeroed) r.flags |= kFlagZeroed;
}

void add_bn(Record& r, const BatchNormState<float>& bn) {
  r.arrays.push_back(vec_array("bn.gamma", bn.gamma));
  r.arrays.push_back(vec_array("bn.beta", bn.beta));
  r.arrays.push_back(vec_array("bn.mean", bn.running_mean));
  r.arrays.push_back(vec_array("bn.var", bn.running_var));
  const float hyper[2] = {bn.epsilon, bn.momentum};
  r.arrays.push_back(vec_array("bn.eps_momentum", hyper));
}

Record convbn_record(const LayerAddress& a, const std::optional<ConvBn>& c,
                     const std::optional<std::vector<float>>& fold) {
  Record r{a.str(), 0, {}};
  if (c) {
    add_conv(r, c->conv);
    add_bn(r, c->bn);
  } else {
    r.flags |= kFlagRemoved;
  }
  if (fold) r.arrays.push_back(vec_array("fold", *fold));
  return r;
}

std::vector<Record> collect_records(const Model& m) {
  std::vector<Record> out;
  out.push_back(convbn_record(LayerAddress::stem(), m.stem, std::nullopt));
  for (std::size_t s = 0; s < m.stages.size(); ++s) {
    for (std::size_t u = 0; u < m.stages[s].size(); ++u) {
      const ResidualUnit& unit = m.stages[s][u];
      const int si = static_cast<int>(s);
      const int ui = static_cast<int>(u);
      out.push_back(convbn_record(LayerAddress::in_unit(si, ui, Slot::conv1), unit.conv1, unit.folded_conv1));
      out.push_back(convbn_record(LayerAddress::in_unit(si, ui, Slot::conv2), unit.conv2, unit.folded_conv2));
      if (unit.projection) {
        out.push_back(convbn_record(LayerAddress::in_unit(si, ui, Slot::proj), unit.proj, unit.folded_proj));
      }
    }
  }
  if (m.config.task == Task::classify) {
    Record r{LayerAddress::head(0).str(), 0, {}};
    add_conv(r, m.classifier.fc);
    r.arrays.push_back(vec_array("bias", m.classifier.bias));
    out.push_back(std::move(r));
  } else {
    int i = 0;
    for (const ConvBn& c : m.segmenter.up) {
      Record r{LayerAddress::head(i++).str(), 0, {}};
      add_conv(r, c.conv);
      add_bn(r, c.bn);
      out.push_back(std::move(r));
    }
    Record r{LayerAddress::head(i).str(), 0, {}};
    add_conv(r, m.segmenter.out);
    r.arrays.push_back(vec_array("bias", m.segmenter.bias));
    out.push_back(std::move(r));
  }
  return out;
}

const Array& find_array(const Record& r, const std::string& name) {
  for (const Array& a : r.arrays) {
    if (a.name == name) return a;
  }
  throw FormatError("record " + r.address + " lacks array '" + name + "'");
}

void copy_into(const Record& r, const std::string& name, std::vector<float>& dst) {
  const Array& a = find_array(r, name);
  if (a.values.size() != dst.size()) {
    throw FormatError("record " + r.address + " array '" + name + "' has " +
                      std::to_string(a.values.size()) + " values, expected " +
                      std::to_string(dst.size()));
  }
  dst = a.values;
}

void restore_conv(const Record& r, ConvKernel<float>& k) {
  copy_into(r, "weight", k.weights);
  k.zeroed = (r.flags & kFlagZeroed) != 0;
}

void restore_bn(const Record& r, BatchNormState<float>& bn) {
  copy_into(r, "bn.gamma", bn.gamma);
  copy_into(r, "bn.beta", bn.beta);
  copy_into(r, "bn.mean", bn.running_mean);
  copy_into(r, "bn.var", bn.running_var);
  const Array& h = find_array(r, "bn.eps_momentum");
  if (h.values.size() != 2) throw FormatError("record " + r.address + " has malformed BN hyperparameters");
  bn.epsilon = h.values[0];
  bn.momentum = h.values[1];
}

void restore_convbn(const Record& r, std::optional<ConvBn>& c,
                    std::optional<std::vector<float>>& fold) {
  if (r.flags & kFlagRemoved) {
    c.reset();
  } else {
    restore_conv(r, c->conv);
    restore_bn(r, c->bn);
  }
  fold.reset();
  for (const Array& a : r.arrays) {
    if (a.name == "fold") fold = a.values;
  }
}

}  // namespace

std::size_t checkpoint_record_count(const Model& model) { return collect_records(model).size(); }

std::vector<std::uint8_t> serialize_model(const Model& model) {
  Writer w;
  w.put_bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.put<std::uint32_t>(kCheckpointVersion);
  const std::size_t size_pos = w.bytes().size();
  w.put<std::uint64_t>(0);
  const std::string cfg = model.config.to_text();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.size()));
  w.put_bytes(cfg.data(), cfg.size());
  const std::vector<Record> records = collect_records(model);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(records.size()));
  for (const Record& r : records) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(r.address.size()));
    w.put_bytes(r.address.data(), r.address.size());
    w.put<std::uint8_t>(r.flags);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(r.arrays.size()));
    for (const Array& a : r.arrays) {
      w.put<std::uint8_t>(static_cast<std::uint8_t>(a.name.size()));
      w.put_bytes(a.name.data(), a.name.size());
      for (std::uint32_t d : a.shape) w.put<std::uint32_t>(d);
      w.put<std::uint64_t>(a.values.size());
      w.put_bytes(a.values.data(), a.values.size() * sizeof(float));
    }
  }
  std::vector<std::uint8_t>& bytes = w.bytes();
  const std::uint64_t total = bytes.size() + sizeof(std::uint32_t);
  std::memcpy(bytes.data() + size_pos, &total, sizeof(total));
  const std::uint32_t crc =
      static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
  w.put<std::uint32_t>(crc);
  return std::move(w.bytes());
}

Model deserialize_model(const std::vector<std::uint8_t>& bytes) {
  constexpr std::size_t kHeader = sizeof(kCheckpointMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw FormatError("not a checkpoint file (bad magic)");
  }
  if (bytes.size() < kHeader) throw TruncationError("checkpoint header is truncated");
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + sizeof(kCheckpointMagic), sizeof(version));
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  std::uint64_t total = 0;
  std::memcpy(&total, bytes.data() + sizeof(kCheckpointMagic) + sizeof(version), sizeof(total));
  if (bytes.size() < total) {
    throw TruncationError("checkpoint is truncated: " + std::to_string(bytes.size()) + " of " +
                          std::to_string(total) + " bytes");
  }
  if (bytes.size() != total || total < kHeader + sizeof(std::uint32_t)) {
    throw FormatError("checkpoint length does not match its header");
  }
  const std::size_t payload = bytes.size() - sizeof(std::uint32_t);
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + payload, sizeof(stored));
  const auto actual = static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(payload)));
  if (stored != actual) throw ChecksumError("checkpoint checksum mismatch");

  Reader r(bytes, payload);
  r.get_string(kHeader);
  const std::string cfg_text = r.get_string(r.get<std::uint32_t>());
  ResNetConfig config;
  try {
    config = ResNetConfig::from_text(cfg_text);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config is invalid: ") + e.what());
  }
  Model m = build_model(config);
  std::map<std::string, Record> by_address;
  const std::uint32_t count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    Record rec;
    rec.address = r.get_string(r.get<std::uint16_t>());
    rec.flags = r.get<std::uint8_t>();
    const std::uint32_t arrays = r.get<std::uint32_t>();
    for (std::uint32_t j = 0; j < arrays; ++j) {
      Array a;
      a.name = r.get_string(r.get<std::uint8_t>());
      for (auto& d : a.shape) d = r.get<std::uint32_t>();
      const std::uint64_t n = r.get<std::uint64_t>();
      if (n > payload) throw FormatError("checkpoint array length is implausible");
      a.values.resize(static_cast<std::size_t>(n));
      r.get_floats(a.values.data(), a.values.size());
      rec.arrays.push_back(std::move(a));
    }
    const std::string key = rec.address;
    if (!by_address.emplace(key, std::move(rec)).second) {
      throw FormatError("duplicate checkpoint record " + key);
    }
  }
  if (r.pos() != payload) throw FormatError("trailing bytes after checkpoint records");

  const std::vector<Record> expected = collect_records(m);
  if (expected.size() != by_address.size()) {
    throw FormatError("checkpoint holds " + std::to_string(by_address.size()) + " records, config implies " +
                      std::to_string(expected.size()));
  }
  auto record_for = [&](const LayerAddress& a) -> const Record& {
    const auto it = by_address.find(a.str());
    if (it == by_address.end()) throw FormatError("checkpoint lacks record " + a.str());
    return it->second;
  };
  {
    std::optional<ConvBn> stem = m.stem;
    std::optional<std::vector<float>> unused;
    restore_convbn(record_for(LayerAddress::stem()), stem, unused);
    if (!stem) throw FormatError("stem cannot be removed");
    m.stem = *stem;
  }
  for (std::size_t s = 0; s < m.stages.size(); ++s) {
    for (std::size_t u = 0; u < m.stages[s].size(); ++u) {
      ResidualUnit& unit = m.stages[s][u];
      const int si = static_cast<int>(s);
      const int ui = static_cast<int>(u);
      restore_convbn(record_for(LayerAddress::in_unit(si, ui, Slot::conv1)), unit.conv1, unit.folded_conv1);
      restore_convbn(record_for(LayerAddress::in_unit(si, ui, Slot::conv2)), unit.conv2, unit.folded_conv2);
      if (unit.projection) {
        restore_convbn(record_for(LayerAddress::in_unit(si, ui, Slot::proj)), unit.proj, unit.folded_proj);
      }
    }
  }
  if (m.config.task == Task::classify) {
    const Record& rec = record_for(LayerAddress::head(0));
    restore_conv(rec, m.classifier.fc);
    copy_into(rec, "bias", m.classifier.bias);
  } else {
    int i = 0;
    for (ConvBn& c : m.segmenter.up) {
      const Record& rec = record_for(LayerAddress::head(i++));
      restore_conv(rec, c.conv);
      restore_bn(rec, c.bn);
    }
    const Record& rec = record_for(LayerAddress::head(i));
    restore_conv(rec, m.segmenter.out);
    copy_into(rec, "bias", m.segmenter.bias);
  }
  return m;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = serialize_model(model);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

std::string fingerprint(const Model& model) {
  const std::vector<std::uint8_t> bytes = serialize_model(model);
  // The trailing CRC covers everything else in the serialized form.
  std::uint32_t crc = 0;
  std::memcpy(&crc, bytes.data() + bytes.size() - sizeof(crc), sizeof(crc));
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%08x-%zu", crc, model.parameter_count());
  return buf;
}

}  // namespace resablate
