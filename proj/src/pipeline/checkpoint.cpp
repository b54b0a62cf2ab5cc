#include "tdce/pipeline/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "tdce/common/error.hpp"

namespace tdce::pipeline {

static_assert(std::endian::native == std::endian::little, "MMC1 I/O assumes a little-endian host");

models::ModelConfig ModelCheckpoint::model_config() const {
  if (!metadata.contains("model")) throw ValidationError("checkpoint metadata has no 'model' block");
  models::ModelConfig c = metadata.at("model").get<models::ModelConfig>();
  models::validate(c);
  return c;
}

namespace {

constexpr char kMagic[4] = {'M', 'M', 'C', '1'};

template <typename T>
void put(std::vector<unsigned char>& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.insert(out.end(), b, b + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& b) : b_(b) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void doubles(double* dst, std::size_t n) {
    if (n > (b_.size() - pos_) / sizeof(double)) fail("parameter payload shorter than declared shape");
    std::memcpy(dst, b_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }

  bool done() const { return pos_ == b_.size(); }

  [[noreturn]] void fail(const std::string& what) const {
    throw ValidationError("corrupt checkpoint at byte " + std::to_string(pos_) + ": " + what);
  }

 private:
  void need(std::size_t n) const {
    if (n > b_.size() - pos_) fail("unexpected end of data");
  }

  const std::vector<unsigned char>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<unsigned char> serialize(const ModelCheckpoint& c) {
  std::vector<unsigned char> out(kMagic, kMagic + 4);
  const std::string meta = c.metadata.dump();
  put<std::uint64_t>(out, meta.size());
  out.insert(out.end(), meta.begin(), meta.end());
  put<std::uint64_t>(out, c.params.size());
  for (const auto& p : c.params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape()) put<std::uint64_t>(out, d);
    out.push_back(p.trainable ? 1 : 0);
    const auto* raw = reinterpret_cast<const unsigned char*>(p.value.ptr());
    out.insert(out.end(), raw, raw + p.value.size() * sizeof(double));
  }
  return out;
}

ModelCheckpoint deserialize(const std::vector<unsigned char>& bytes) {
  Reader r(bytes);
  if (r.str(4) != std::string(kMagic, 4)) r.fail("bad magic (expected MMC1)");
  ModelCheckpoint c;
  const auto meta_len = r.get<std::uint64_t>();
  if (meta_len > bytes.size()) r.fail("metadata length exceeds file size");
  try {
    c.metadata = nlohmann::json::parse(r.str(static_cast<std::size_t>(meta_len)));
  } catch (const nlohmann::json::parse_error& e) {
    r.fail(std::string("metadata is not valid JSON: ") + e.what());
  }
  if (!c.metadata.is_object()) r.fail("metadata must be a JSON object");
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    std::string name = r.str(name_len);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) r.fail("implausible rank for '" + name + "'");
    diff::Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    const auto flag = r.get<std::uint8_t>();
    if (flag > 1) r.fail("trainable flag must be 0 or 1 for '" + name + "'");
    const std::size_t n = diff::element_count(shape);
    std::vector<double> data(n);
    r.doubles(data.data(), n);
    c.params.add(std::move(name), diff::Tensor(shape, std::move(data)), flag == 1);
  }
  if (!r.done()) r.fail("trailing bytes after parameter payload");
  return c;
}

void save_checkpoint(const ModelCheckpoint& c, const std::filesystem::path& path) {
  const auto bytes = serialize(c);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw RuntimeFailure("write failed: " + path.string());
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace tdce::pipeline
