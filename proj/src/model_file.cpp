#include "syllab/model_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "syllab/error.hpp"
#include "syllab/rng.hpp"

namespace syllab {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_str(std::string& out, std::string_view s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return std::string(take(static_cast<std::size_t>(uint(4)))); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error(ErrorKind::Format, "model file is truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

template <typename F, typename U>
std::vector<std::uint8_t> pack(std::span<const F> values) {
  std::vector<std::uint8_t> out;
  out.reserve(values.size() * sizeof(F));
  for (F v : values) {
    const auto bits = std::bit_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xFF));
  }
  return out;
}

template <typename F, typename U>
std::vector<F> unpack(const std::vector<std::uint8_t>& bytes) {
  std::vector<F> out(bytes.size() / sizeof(U));
  for (std::size_t k = 0; k < out.size(); ++k) {
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(bytes[k * sizeof(U) + i]) << (8 * i);
    out[k] = std::bit_cast<F>(bits);
  }
  return out;
}

std::uint64_t product(const std::vector<std::uint64_t>& shape) {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

}  // namespace

void ModelFile::add(Entry e) {
  if (has(e.name)) throw Error(ErrorKind::InvalidArgument, "duplicate model entry '" + e.name + "'");
  entries_.push_back(std::move(e));
}

void ModelFile::add_f32(std::string name, std::vector<std::uint64_t> shape, std::span<const float> values) {
  if (product(shape) != values.size()) throw Error(ErrorKind::ShapeMismatch, "tensor '" + name + "' shape");
  add({std::move(name), DType::F32, std::move(shape), pack<float, std::uint32_t>(values)});
}

void ModelFile::add_f64(std::string name, std::vector<std::uint64_t> shape, std::span<const double> values) {
  if (product(shape) != values.size()) throw Error(ErrorKind::ShapeMismatch, "tensor '" + name + "' shape");
  add({std::move(name), DType::F64, std::move(shape), pack<double, std::uint64_t>(values)});
}

void ModelFile::add_u8(std::string name, std::span<const std::uint8_t> values) {
  add({std::move(name), DType::U8, {values.size()}, std::vector<std::uint8_t>(values.begin(), values.end())});
}

void ModelFile::add_strings(std::string name, const std::vector<std::string>& values) {
  std::string buf;
  for (const auto& s : values) put_str(buf, s);
  add({std::move(name), DType::Strings, {values.size()}, std::vector<std::uint8_t>(buf.begin(), buf.end())});
}

bool ModelFile::has(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

const ModelFile::Entry& ModelFile::entry(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw Error(ErrorKind::Format, "model file has no entry '" + std::string(name) + "'");
}

namespace {

void check(const ModelFile::Entry& e, ModelFile::DType dtype, const std::vector<std::uint64_t>& shape) {
  if (e.dtype != dtype) throw Error(ErrorKind::Format, "entry '" + e.name + "' has the wrong type");
  if (!shape.empty() && e.shape != shape) {
    throw Error(ErrorKind::ShapeMismatch, "entry '" + e.name + "' has an unexpected shape");
  }
}

}  // namespace

std::vector<float> ModelFile::f32(std::string_view name, const std::vector<std::uint64_t>& shape) const {
  const auto& e = entry(name);
  check(e, DType::F32, shape);
  return unpack<float, std::uint32_t>(e.bytes);
}

std::vector<double> ModelFile::f64(std::string_view name, const std::vector<std::uint64_t>& shape) const {
  const auto& e = entry(name);
  check(e, DType::F64, shape);
  return unpack<double, std::uint64_t>(e.bytes);
}

std::vector<std::uint8_t> ModelFile::u8(std::string_view name) const {
  const auto& e = entry(name);
  check(e, DType::U8, {});
  return e.bytes;
}

std::vector<std::string> ModelFile::strings(std::string_view name) const {
  const auto& e = entry(name);
  check(e, DType::Strings, {});
  Reader r(std::string_view(reinterpret_cast<const char*>(e.bytes.data()), e.bytes.size()));
  std::vector<std::string> out;
  out.reserve(e.shape.empty() ? 0 : e.shape[0]);
  while (!r.done()) out.push_back(r.str());
  return out;
}

std::string ModelFile::serialize() const {
  std::string out(kMagic);
  put_u32(out, format_version);
  put_str(out, engine);
  put_str(out, config.dump());
  put_u32(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    put_str(out, e.name);
    out.push_back(static_cast<char>(e.dtype));
    put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) put_u64(out, d);
    put_u64(out, e.bytes.size());
    out.append(reinterpret_cast<const char*>(e.bytes.data()), e.bytes.size());
  }
  return out;
}

ModelFile ModelFile::parse(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(kMagic.size()) != kMagic) throw Error(ErrorKind::Format, "not a model file (bad magic)");
  ModelFile m;
  m.format_version = static_cast<std::uint32_t>(r.uint(4));
  if (m.format_version != kFormatVersion) {
    throw Error(ErrorKind::Format, "unsupported model format version " + std::to_string(m.format_version));
  }
  m.engine = r.str();
  try {
    m.config = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Format, std::string("model config is not valid JSON: ") + e.what());
  }
  const auto count = r.uint(4);
  for (std::uint64_t i = 0; i < count; ++i) {
    Entry e;
    e.name = r.str();
    const auto dtype = r.uint(1);
    if (dtype > 3) throw Error(ErrorKind::Format, "unknown dtype in entry '" + e.name + "'");
    e.dtype = static_cast<DType>(dtype);
    const auto rank = r.uint(4);
    for (std::uint64_t k = 0; k < rank; ++k) e.shape.push_back(r.uint(8));
    const auto size = r.uint(8);
    const auto data = r.take(static_cast<std::size_t>(size));
    e.bytes.assign(data.begin(), data.end());
    m.add(std::move(e));
  }
  if (!r.done()) throw Error(ErrorKind::Format, "trailing bytes after model entries");
  return m;
}

void ModelFile::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  const auto bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

ModelFile ModelFile::load(const std::filesystem::path& path) { return parse(read_file_bytes(path)); }

std::uint64_t ModelFile::content_hash() const {
  const auto bytes = serialize();
  return fnv1a(bytes.data(), bytes.size());
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
    v >>= 4;
  }
  return s;
}

}  // namespace syllab
