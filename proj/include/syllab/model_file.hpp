#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace syllab {

/// Versioned binary envelope for trained models.
///
/// Layout (all integers little-endian):
///   magic "SYLLABMF" | u32 format_version | str engine | str config-json |
///   u32 entry count | entries...
/// where str is u32 length + bytes and each entry is
///   str name | u8 dtype | u32 rank | u64 dims[rank] | u64 byte length | bytes.
/// Float tensors are IEEE-754 little-endian; string lists store u32 length +
/// bytes per element.
class ModelFile {
 public:
  static constexpr std::string_view kMagic = "SYLLABMF";
  static constexpr std::uint32_t kFormatVersion = 1;

  enum class DType : std::uint8_t { F32 = 0, F64 = 1, U8 = 2, Strings = 3 };

  struct Entry {
    std::string name;
    DType dtype = DType::F32;
    std::vector<std::uint64_t> shape;
    std::vector<std::uint8_t> bytes;
  };

  ModelFile() = default;
  explicit ModelFile(std::string engine) : engine(std::move(engine)) {}

  std::string engine;
  std::uint32_t format_version = kFormatVersion;
  nlohmann::json config = nlohmann::json::object();

  void add_f32(std::string name, std::vector<std::uint64_t> shape, std::span<const float> values);
  void add_f64(std::string name, std::vector<std::uint64_t> shape, std::span<const double> values);
  void add_u8(std::string name, std::span<const std::uint8_t> values);
  void add_strings(std::string name, const std::vector<std::string>& values);

  bool has(std::string_view name) const;
  const Entry& entry(std::string_view name) const;
  /// Checks dtype and, when given, the shape. Throws Format.
  std::vector<float> f32(std::string_view name, const std::vector<std::uint64_t>& shape = {}) const;
  std::vector<double> f64(std::string_view name, const std::vector<std::uint64_t>& shape = {}) const;
  std::vector<std::uint8_t> u8(std::string_view name) const;
  std::vector<std::string> strings(std::string_view name) const;
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  std::string serialize() const;
  static ModelFile parse(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static ModelFile load(const std::filesystem::path& path);
  /// FNV-1a of the serialized form.
  std::uint64_t content_hash() const;

 private:
  void add(Entry e);
  std::vector<Entry> entries_;
};

std::string read_file_bytes(const std::filesystem::path& path);
std::string hex64(std::uint64_t v);

}  // namespace syllab
