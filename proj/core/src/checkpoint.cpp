#include <cstring>
#include <fstream>
#include <map>

#include "knncross/model.hpp"

namespace knncross {

namespace {

constexpr char kMagic[4] = {'U', 'L', 'M', 'F'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& is, const std::string& what) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
    throw DataError("checkpoint truncated reading " + what);
  return v;
}

std::uint64_t get_u64(std::istream& is, const std::string& what) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
    throw DataError("checkpoint truncated reading " + what);
  return v;
}

}  // namespace

void save_checkpoint(const ModelWeights& w, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  const ModelConfig& c = w.config;
  for (std::uint64_t v : {c.d_model, c.n_heads, c.n_enc_layers, c.n_dec_layers,
                          c.d_ff, c.vocab_size, c.window})
    put_u64(os, v);
  put_u64(os, c.seed);
  visit_params(w, [&](const std::string& name, const Matrix& m) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(os, m.rows);
    put_u64(os, m.cols);
    os.write(reinterpret_cast<const char*>(m.data.data()),
             static_cast<std::streamsize>(m.data.size() * sizeof(float)));
  });
  if (!os) throw IoError("write failed for " + path.string());
}

ModelWeights load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[4] = {};
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("not a model checkpoint: " + path.string());
  if (std::uint32_t ver = get_u32(is, "version"); ver != kVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(ver));
  ModelConfig c;
  c.d_model = get_u64(is, "d_model");
  c.n_heads = get_u64(is, "n_heads");
  c.n_enc_layers = get_u64(is, "n_enc_layers");
  c.n_dec_layers = get_u64(is, "n_dec_layers");
  c.d_ff = get_u64(is, "d_ff");
  c.vocab_size = get_u64(is, "vocab_size");
  c.window = get_u64(is, "window");
  c.seed = get_u64(is, "seed");
  try {
    c.validate();
  } catch (const Error& e) {
    throw DataError("checkpoint config invalid: " + std::string(e.what()));
  }

  std::map<std::string, Matrix> tensors;
  while (true) {
    std::uint32_t len = 0;
    if (!is.read(reinterpret_cast<char*>(&len), sizeof len)) break;  // EOF
    std::string name(len, '\0');
    if (!is.read(name.data(), len))
      throw DataError("checkpoint truncated reading tensor name");
    std::uint64_t rows = get_u64(is, name + " rows");
    std::uint64_t cols = get_u64(is, name + " cols");
    Matrix m{static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)};
    if (!is.read(reinterpret_cast<char*>(m.data.data()),
                 static_cast<std::streamsize>(m.data.size() * sizeof(float))))
      throw DataError("checkpoint truncated reading tensor " + name);
    if (!tensors.emplace(name, std::move(m)).second)
      throw DataError("duplicate tensor " + name);
  }

  ModelWeights w = weights_shell<float>(c);
  std::size_t used = 0;
  visit_params(w, [&](const std::string& name, Matrix& m) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("checkpoint missing tensor " + name);
    if (it->second.rows != m.rows || it->second.cols != m.cols)
      throw DataError("tensor " + name + " has shape " +
                      shape_str(it->second.rows, it->second.cols) +
                      ", expected " + shape_str(m.rows, m.cols));
    m = std::move(it->second);
    ++used;
  });
  if (used != tensors.size())
    throw DataError("checkpoint holds unknown tensors");
  return w;
}

}  // namespace knncross
