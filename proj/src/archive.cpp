#include "onlinehoi/archive.hpp"

#include "onlinehoi/errors.hpp"
#include "onlinehoi/hash.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace onlinehoi::archive {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'O', 'H', 'I', 'A', 'R', 'C', 'H', '1'};
constexpr std::uint32_t kMaxKey = 1u << 16;
constexpr std::uint32_t kMaxDims = 8;

template <typename T>
void put_pod(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T pod() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  std::string str(std::size_t n) { return std::string(take(n), n); }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const char* take(std::size_t n) {
    if (n > remaining()) throw ConfigError("archive: truncated at byte " + std::to_string(pos_));
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::string key_error(const std::string& key) { return "archive: missing key '" + key + "'"; }

}  // namespace

std::int64_t Array::size() const {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Mat Array::matrix() const {
  if (shape.size() != 2) throw ShapeError("archive: array is not 2-D");
  Mat m(shape[0], shape[1]);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

Array from_matrix(const Mat& m, DType dtype) {
  Array a;
  a.shape = {m.rows(), m.cols()};
  a.dtype = dtype;
  a.data.assign(m.data(), m.data() + m.size());
  if (dtype == DType::f32)
    for (double& v : a.data) v = static_cast<float>(v);
  return a;
}

void Archive::put(const std::string& key, Array a) {
  if (a.size() != static_cast<std::int64_t>(a.data.size())) throw ShapeError("archive: shape/data mismatch for '" + key + "'");
  for (auto& [k, v] : arrays) {
    if (k == key) {
      v = std::move(a);
      return;
    }
  }
  arrays.emplace_back(key, std::move(a));
}

bool Archive::contains(const std::string& key) const {
  for (const auto& [k, v] : arrays)
    if (k == key) return true;
  return false;
}

const Array& Archive::get(const std::string& key) const {
  for (const auto& [k, v] : arrays)
    if (k == key) return v;
  throw ConfigError(key_error(key));
}

std::string to_bytes(const Archive& a) {
  std::string out(kMagic, sizeof(kMagic));
  const std::string meta = a.meta.dump();
  put_pod<std::uint64_t>(out, meta.size());
  out += meta;
  put_pod<std::uint64_t>(out, a.arrays.size());
  for (const auto& [key, arr] : a.arrays) {
    if (key.size() >= kMaxKey) throw ConfigError("archive: key too long");
    if (arr.shape.size() > kMaxDims) throw ShapeError("archive: too many dimensions for '" + key + "'");
    put_pod<std::uint32_t>(out, static_cast<std::uint32_t>(key.size()));
    out += key;
    put_pod<std::uint8_t>(out, static_cast<std::uint8_t>(arr.dtype));
    put_pod<std::uint32_t>(out, static_cast<std::uint32_t>(arr.shape.size()));
    for (auto d : arr.shape) put_pod<std::int64_t>(out, d);
    for (double v : arr.data) {
      if (arr.dtype == DType::f64) put_pod<double>(out, v);
      else put_pod<float>(out, static_cast<float>(v));
    }
  }
  put_pod<std::uint64_t>(out, Fnv1a().bytes(out.data(), out.size()).value());
  return out;
}

void write(std::ostream& os, const Archive& a) {
  const std::string bytes = to_bytes(a);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw InvalidState("archive: write failed");
}

Archive read(std::istream& is) {
  std::ostringstream ss;
  ss << is.rdbuf();
  const std::string bytes = ss.str();
  if (bytes.size() < sizeof(kMagic) + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw ConfigError("archive: bad magic");
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (Fnv1a().bytes(bytes.data(), bytes.size() - 8).value() != stored) throw ConfigError("archive: checksum mismatch");

  const std::string body = bytes.substr(0, bytes.size() - 8);
  Reader r(body);
  r.str(sizeof(kMagic));
  Archive a;
  const auto meta_len = r.pod<std::uint64_t>();
  if (meta_len > r.remaining()) throw ConfigError("archive: truncated metadata");
  try {
    a.meta = nlohmann::json::parse(r.str(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("archive: bad metadata: ") + e.what());
  }
  const auto count = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto key_len = r.pod<std::uint32_t>();
    if (key_len >= kMaxKey) throw ConfigError("archive: key too long");
    const std::string key = r.str(key_len);
    Array arr;
    const auto dt = r.pod<std::uint8_t>();
    if (dt > 1) throw ConfigError("archive: unknown dtype for '" + key + "'");
    arr.dtype = static_cast<DType>(dt);
    const auto ndim = r.pod<std::uint32_t>();
    if (ndim > kMaxDims) throw ConfigError("archive: too many dimensions for '" + key + "'");
    std::int64_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const auto dim = r.pod<std::int64_t>();
      if (dim < 0) throw ConfigError("archive: negative dimension for '" + key + "'");
      arr.shape.push_back(dim);
      n *= dim;
    }
    const std::size_t width = arr.dtype == DType::f64 ? 8 : 4;
    if (static_cast<std::uint64_t>(n) > r.remaining() / width) throw ConfigError("archive: truncated data for '" + key + "'");
    arr.data.resize(static_cast<std::size_t>(n));
    for (auto& v : arr.data) v = arr.dtype == DType::f64 ? r.pod<double>() : static_cast<double>(r.pod<float>());
    a.arrays.emplace_back(key, std::move(arr));
  }
  if (r.remaining() != 0) throw ConfigError("archive: trailing bytes");
  return a;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw InvalidState("cannot open " + tmp.string() + " for writing");
    os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    os.flush();
    if (!os) throw InvalidState("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void save(const std::filesystem::path& path, const Archive& a) { write_file_atomic(path, to_bytes(a)); }

Archive load(const std::filesystem::path& path) {
  std::istringstream is(read_file(path));
  return read(is);
}

void export_params(const nn::ParamStore& store, Archive& a, const std::string& prefix, DType dtype) {
  for (const auto& [name, p] : store.items()) a.put(prefix + name, from_matrix(p.value(), dtype));
}

void import_params(nn::ParamStore& store, const Archive& a, const std::string& prefix) {
  for (const auto& [name, p] : store.items()) {
    const Array& arr = a.get(prefix + name);
    if (arr.shape != std::vector<std::int64_t>{p.rows(), p.cols()})
      throw ShapeError("archive: shape mismatch for '" + prefix + name + "'");
    ag::Var v = p;
    v.mutable_value() = arr.matrix();
  }
}

void export_adam(const nn::ParamStore& store, const nn::Adam& opt, Archive& a) {
  a.meta["adam_steps"] = opt.steps_taken();
  const auto& items = store.items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    a.put("adam.m/" + items[i].first, from_matrix(opt.first_moments()[i]));
    a.put("adam.v/" + items[i].first, from_matrix(opt.second_moments()[i]));
  }
}

void import_adam(const nn::ParamStore& store, nn::Adam& opt, const Archive& a) {
  if (!a.meta.contains("adam_steps")) throw ConfigError(key_error("adam_steps"));
  std::vector<Mat> m, v;
  for (const auto& [name, p] : store.items()) {
    m.push_back(a.get("adam.m/" + name).matrix());
    v.push_back(a.get("adam.v/" + name).matrix());
    if (m.back().rows() != p.rows() || m.back().cols() != p.cols() || v.back().rows() != p.rows() || v.back().cols() != p.cols())
      throw ShapeError("archive: optimizer state shape mismatch for '" + name + "'");
  }
  opt.restore(a.meta["adam_steps"].get<std::int64_t>(), std::move(m), std::move(v));
}

}  // namespace onlinehoi::archive
