#pragma once

#include "onlinehoi/nn.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace onlinehoi::archive {

using ag::Mat;

enum class DType : std::uint8_t { f64 = 0, f32 = 1 };

struct Array {
  std::vector<std::int64_t> shape;
  DType dtype = DType::f64;
  std::vector<double> data;  // row-major; f32 arrays are widened on read

  std::int64_t size() const;
  Mat matrix() const;
};

Array from_matrix(const Mat& m, DType dtype = DType::f64);

/// Named arrays plus a JSON metadata block. Keys keep insertion order.
struct Archive {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Array>> arrays;

  void put(const std::string& key, Array a);
  bool contains(const std::string& key) const;
  const Array& get(const std::string& key) const;
};

// Layout (little-endian):
//   "OHIARCH1"  u64 meta_len  meta_json
//   u64 count   { u32 key_len key  u8 dtype  u32 ndim  i64 dims[ndim]  data }*
//   u64 fnv1a of every preceding byte
void write(std::ostream& os, const Archive& a);
Archive read(std::istream& is);

std::string to_bytes(const Archive& a);
void save(const std::filesystem::path& path, const Archive& a);
Archive load(const std::filesystem::path& path);

/// Writes through a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

void export_params(const nn::ParamStore& store, Archive& a, const std::string& prefix = "param/",
                   DType dtype = DType::f64);
/// Every store parameter must be present with a matching shape.
void import_params(nn::ParamStore& store, const Archive& a, const std::string& prefix = "param/");

void export_adam(const nn::ParamStore& store, const nn::Adam& opt, Archive& a);
void import_adam(const nn::ParamStore& store, nn::Adam& opt, const Archive& a);

}  // namespace onlinehoi::archive
