#include "adair/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "adair/train.hpp"

namespace adair {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'A', 'D', 'A', 'I', 'R', 'C', 'K', 'P'};

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  template <typename Scalar>
  void put_array(const ArrayX<Scalar>& a, Precision p) {
    for (Index i = 0; i < a.size(); ++i) {
      if (p == Precision::f32) put(static_cast<float>(a[i]));
      else put(static_cast<double>(a[i]));
    }
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  template <typename Scalar>
  ArrayX<Scalar> get_array(Index n, Precision p) {
    need(static_cast<std::size_t>(n) * (p == Precision::f32 ? 4 : 8));
    ArrayX<Scalar> a(n);
    for (Index i = 0; i < n; ++i) a[i] = p == Precision::f32 ? static_cast<Scalar>(get<float>()) : static_cast<Scalar>(get<double>());
    return a;
  }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) fail(ErrorKind::CorruptCheckpoint, "file ends early");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

template <typename Scalar>
constexpr Precision precision_of() {
  return sizeof(Scalar) <= 4 ? Precision::f32 : Precision::f64;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct StoredTensor {
  std::string name;
  Precision precision;
  Shape shape;
  std::size_t offset;  // of the raw data
};

struct Parsed {
  CheckpointInfo info;
  std::vector<StoredTensor> tensors;
  std::size_t optimizer_offset = 0;
};

/// Validates magic, checksum and structure; leaves data in place.
Parsed parse(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    fail(ErrorKind::CorruptCheckpoint, "bad magic");
  }
  std::uint64_t stored_sum;
  std::memcpy(&stored_sum, bytes.data() + bytes.size() - 8, 8);
  if (fnv1a64(bytes.data(), bytes.size() - 8) != stored_sum) fail(ErrorKind::CorruptCheckpoint, "checksum mismatch");

  const std::vector<std::uint8_t> body(bytes.begin(), bytes.end() - 8);
  Reader r(body);
  for (std::size_t i = 0; i < sizeof kMagic; ++i) r.get<char>();
  Parsed out;
  out.info.version = r.get<std::uint32_t>();
  if (out.info.version != kCheckpointVersion) {
    fail(ErrorKind::CorruptCheckpoint, "unsupported version " + std::to_string(out.info.version));
  }
  try {
    out.info.config = ModelConfig::from_text(r.get_string());
  } catch (const Error& e) {
    fail(ErrorKind::CorruptCheckpoint, std::string("stored config unreadable: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t t = 0; t < count; ++t) {
    StoredTensor st;
    st.name = r.get_string();
    const auto p = r.get<std::uint8_t>();
    if (p > 1) fail(ErrorKind::CorruptCheckpoint, "bad precision tag in " + st.name);
    st.precision = p == 0 ? Precision::f32 : Precision::f64;
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) fail(ErrorKind::CorruptCheckpoint, "bad rank in " + st.name);
    for (std::uint32_t a = 0; a < rank; ++a) st.shape.push_back(static_cast<Index>(r.get<std::uint64_t>()));
    st.offset = r.position();
    r.get_array<double>(shape_numel(st.shape), st.precision);
    out.info.parameters += shape_numel(st.shape);
    if (t == 0) out.info.precision = st.precision;
    out.tensors.push_back(std::move(st));
  }
  out.info.tensors = out.tensors.size();
  out.info.has_optimizer = r.get<std::uint8_t>() != 0;
  out.optimizer_offset = r.position();
  if (out.info.has_optimizer) {
    r.get<std::int64_t>();
    for (const auto& st : out.tensors) {
      r.get_array<double>(shape_numel(st.shape), st.precision);
      r.get_array<double>(shape_numel(st.shape), st.precision);
    }
  }
  if (r.position() != body.size()) fail(ErrorKind::CorruptCheckpoint, "trailing bytes before checksum");
  return out;
}

template <typename Scalar>
ArrayX<Scalar> read_at(const std::vector<std::uint8_t>& bytes, std::size_t offset, Index n, Precision p) {
  const std::vector<std::uint8_t> slice(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                                        bytes.begin() + static_cast<std::ptrdiff_t>(offset) +
                                            n * (p == Precision::f32 ? 4 : 8));
  Reader r(slice);
  return r.get_array<Scalar>(n, p);
}

template <typename Scalar>
std::optional<OptimizerState<Scalar>> read_optimizer(const std::vector<std::uint8_t>& bytes, const Parsed& parsed) {
  if (!parsed.info.has_optimizer) return std::nullopt;
  std::vector<std::uint8_t> tail(bytes.begin() + static_cast<std::ptrdiff_t>(parsed.optimizer_offset), bytes.end() - 8);
  Reader r(tail);
  OptimizerState<Scalar> state;
  state.step = r.get<std::int64_t>();
  for (const auto& st : parsed.tensors) {
    state.m.push_back(r.get_array<Scalar>(shape_numel(st.shape), st.precision));
    state.v.push_back(r.get_array<Scalar>(shape_numel(st.shape), st.precision));
  }
  return state;
}

template <typename Scalar>
void fill_weights(AdaIRModel<Scalar>& model, const std::vector<std::uint8_t>& bytes, const Parsed& parsed) {
  const auto& items = model.params.items();
  if (items.size() != parsed.tensors.size()) {
    fail(ErrorKind::ConfigMismatch, "checkpoint has " + std::to_string(parsed.tensors.size()) + " tensors, model has " +
                                        std::to_string(items.size()));
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& st = parsed.tensors[i];
    if (st.name != items[i].name || st.shape != items[i].tensor.shape()) {
      fail(ErrorKind::ConfigMismatch, "tensor " + std::to_string(i) + ": checkpoint " + st.name + " " +
                                          shape_string(st.shape) + " vs model " + items[i].name + " " +
                                          shape_string(items[i].tensor.shape()));
    }
    auto t = items[i].tensor;
    t.data_mut() = read_at<Scalar>(bytes, st.offset, t.numel(), st.precision);
  }
}

}  // namespace

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename Scalar>
std::vector<std::uint8_t> checkpoint_bytes(const AdaIRModel<Scalar>& model, const OptimizerState<Scalar>* optimizer) {
  constexpr Precision p = precision_of<Scalar>();
  Writer w;
  for (char c : kMagic) w.put(c);
  w.put(kCheckpointVersion);
  w.put_string(model.config.to_text());
  const auto& items = model.params.items();
  w.put(static_cast<std::uint32_t>(items.size()));
  for (const auto& item : items) {
    w.put_string(item.name);
    w.put(static_cast<std::uint8_t>(p == Precision::f32 ? 0 : 1));
    w.put(static_cast<std::uint32_t>(item.tensor.rank()));
    for (Index e : item.tensor.shape()) w.put(static_cast<std::uint64_t>(e));
    w.put_array(item.tensor.data(), p);
  }
  const bool has_opt = optimizer != nullptr && optimizer->m.size() == items.size();
  w.put(static_cast<std::uint8_t>(has_opt ? 1 : 0));
  if (has_opt) {
    w.put(static_cast<std::int64_t>(optimizer->step));
    for (std::size_t i = 0; i < items.size(); ++i) {
      w.put_array(optimizer->m[i], p);
      w.put_array(optimizer->v[i], p);
    }
  }
  w.put(fnv1a64(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

template <typename Scalar>
void save_checkpoint(const std::string& path, const AdaIRModel<Scalar>& model, const OptimizerState<Scalar>* optimizer) {
  const auto bytes = checkpoint_bytes(model, optimizer);
  // write beside the target, then rename, so a crash never leaves a torn file
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::Io, "short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) fail(ErrorKind::Io, "cannot rename " + tmp + " to " + path);
}

CheckpointInfo inspect_checkpoint(const std::string& path) { return parse(read_file(path)).info; }

template <typename Scalar>
LoadedCheckpoint<Scalar> load_checkpoint_bytes(const std::vector<std::uint8_t>& bytes) {
  const auto parsed = parse(bytes);
  auto config = parsed.info.config;
  config.init = InitScheme::zeros;
  LoadedCheckpoint<Scalar> out{build_model<Scalar>(config, 0), read_optimizer<Scalar>(bytes, parsed), parsed.info};
  out.model.config.init = parsed.info.config.init;
  fill_weights(out.model, bytes, parsed);
  return out;
}

template <typename Scalar>
LoadedCheckpoint<Scalar> load_checkpoint(const std::string& path) {
  return load_checkpoint_bytes<Scalar>(read_file(path));
}

template <typename Scalar>
void load_weights_into(AdaIRModel<Scalar>& model, const std::string& path) {
  const auto bytes = read_file(path);
  const auto parsed = parse(bytes);
  auto stored = parsed.info.config, mine = model.config;
  stored.init = mine.init = InitScheme::zeros;
  stored.precision = mine.precision = Precision::f32;
  if (!(stored == mine)) fail(ErrorKind::ConfigMismatch, "checkpoint config differs from the model config");
  fill_weights(model, bytes, parsed);
}

#define ADAIR_INSTANTIATE_CHECKPOINT(S)                                                                   \
  template std::vector<std::uint8_t> checkpoint_bytes(const AdaIRModel<S>&, const OptimizerState<S>*);   \
  template void save_checkpoint(const std::string&, const AdaIRModel<S>&, const OptimizerState<S>*);      \
  template LoadedCheckpoint<S> load_checkpoint_bytes(const std::vector<std::uint8_t>&);                  \
  template LoadedCheckpoint<S> load_checkpoint(const std::string&);                                      \
  template void load_weights_into(AdaIRModel<S>&, const std::string&);

ADAIR_INSTANTIATE_CHECKPOINT(float)
ADAIR_INSTANTIATE_CHECKPOINT(double)

}  // namespace adair
