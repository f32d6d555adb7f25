#include "pycat/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

namespace pycat {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

constexpr char kMagic[8] = {'P', 'Y', 'C', 'A', 'T', 'C', 'K', '1'};
constexpr uint8_t kDtypeF64 = 1;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  template <typename T>
  T get(const char* what) {
    T v;
    need(sizeof(T), what);
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }
  [[noreturn]] void fail(const std::string& msg) const {
    throw LoadError(path_ + ": " + msg + " at offset " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n, const char* what) {
    if (data_.size() - pos_ < n) fail(std::string("truncated while reading ") + what);
  }
  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::map<std::string, Tensor>& tensors) {
  std::string out(kMagic, 8);
  put<uint32_t>(out, kCheckpointVersion);
  put<uint32_t>(out, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xffff) throw ContractError("parameter name too long: " + name.substr(0, 40));
    for (double v : t.values())
      if (!std::isfinite(v)) throw ContractError("parameter '" + name + "' is not finite");
    put<uint16_t>(out, static_cast<uint16_t>(name.size()));
    out += name;
    put<uint8_t>(out, kDtypeF64);
    put<uint8_t>(out, static_cast<uint8_t>(t.rank()));
    for (int64_t d : t.shape()) put<uint32_t>(out, static_cast<uint32_t>(d));
    out.append(reinterpret_cast<const char*>(t.values().data()), t.values().size() * sizeof(double));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint '" + path.string() + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store) {
  save_checkpoint(path, store.named());
}

std::map<std::string, Tensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(std::move(data), path.string());
  if (r.bytes(8, "magic") != std::string(kMagic, 8)) {
    throw LoadError(path.string() + ": bad magic at offset 0 (not a PYCATCK1 checkpoint)");
  }
  const uint32_t version = r.get<uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw LoadError(path.string() + ": unsupported checkpoint version " + std::to_string(version) + " at offset 8 (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  const uint32_t count = r.get<uint32_t>("tensor count");
  std::map<std::string, Tensor> out;
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t len = r.get<uint16_t>("name length");
    std::string name = r.bytes(len, "name");
    const std::size_t dtype_at = r.offset();
    if (r.get<uint8_t>("dtype") != kDtypeF64) {
      throw LoadError(path.string() + ": unknown dtype for '" + name + "' at offset " + std::to_string(dtype_at));
    }
    const uint8_t rank = r.get<uint8_t>("rank");
    Shape shape;
    for (uint8_t d = 0; d < rank; ++d) shape.push_back(r.get<uint32_t>("dims"));
    const int64_t n = shape_numel(shape);
    std::string raw = r.bytes(static_cast<std::size_t>(n) * sizeof(double), "values");
    std::vector<double> values(n);
    std::memcpy(values.data(), raw.data(), raw.size());
    if (!out.emplace(name, Tensor(shape, std::move(values))).second) r.fail("duplicate tensor '" + name + "'");
  }
  if (!r.done()) r.fail("trailing bytes after the last tensor");
  return out;
}

void load_checkpoint(const std::filesystem::path& path, ParamStore& store) {
  assign_parameters(read_checkpoint(path), store, path.string());
}

void assign_parameters(const std::map<std::string, Tensor>& stored, ParamStore& store, const std::string& source) {
  std::string missing, unexpected, mismatched;
  for (const auto& [name, t] : store.named()) {
    auto it = stored.find(name);
    if (it == stored.end()) {
      missing += "\n  " + name;
    } else if (it->second.shape() != t.shape()) {
      mismatched += "\n  " + name + " " + shape_str(it->second.shape()) + " vs " + shape_str(t.shape());
    }
  }
  for (const auto& [name, _] : stored)
    if (!store.contains(name)) unexpected += "\n  " + name;
  if (!missing.empty() || !unexpected.empty() || !mismatched.empty()) {
    std::string msg = source + ": checkpoint does not match the model";
    if (!missing.empty()) msg += "\nmissing parameters:" + missing;
    if (!unexpected.empty()) msg += "\nunexpected parameters:" + unexpected;
    if (!mismatched.empty()) msg += "\nshape mismatches:" + mismatched;
    throw LoadError(msg);
  }
  for (const auto& [name, t] : store.named()) {
    Tensor dst = t;
    auto v = dst.mutable_values();
    const auto src = stored.at(name).values();
    std::copy(src.begin(), src.end(), v.begin());
  }
}

}  // namespace pycat
