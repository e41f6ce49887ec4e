#include <algorithm>
#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>

#include "xfnc/error.hpp"
#include "xfnc/nn.hpp"

// File layout (all integers and reals little-endian):
//   8 bytes  magic "XFNCPRM1"
//   u32      tensor count
//   per tensor: u32 name length, name bytes, u64 rows, u64 cols,
//               rows*cols f64 values in row-major order

namespace xfnc::nn {

namespace {

constexpr char kMagic[8] = {'X', 'F', 'N', 'C', 'P', 'R', 'M', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes, 4);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw Error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | bytes[i];
  return v;
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) throw Error("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | bytes[i];
  return v;
}

}  // namespace

void save_checkpoint(const ParamSet& p, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  std::uint32_t count = 0;
  for_each_tensor(p, [&](const std::string&, const Tensor&) { ++count; });
  put_u32(out, count);
  for_each_tensor(p, [&](const std::string& name, const Tensor& t) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(out, static_cast<std::uint64_t>(t.rows()));
    put_u64(out, static_cast<std::uint64_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.cols(); ++j) put_u64(out, std::bit_cast<std::uint64_t>(t(i, j)));
    }
  });
  if (!out) throw Error("error writing checkpoint " + path.string());
}

ParamSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || !std::equal(magic, magic + sizeof magic, kMagic)) {
    throw Error(path.string() + " is not a parameter checkpoint");
  }
  const std::uint32_t count = get_u32(in);
  std::map<std::string, Tensor> tensors;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t len = get_u32(in);
    if (len > 4096) throw Error("checkpoint: implausible tensor name length");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw Error("checkpoint: truncated file");
    const std::uint64_t rows = get_u64(in);
    const std::uint64_t cols = get_u64(in);
    if (rows > (1u << 24) || cols > (1u << 24)) throw Error("checkpoint: implausible shape");
    Tensor t(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.cols(); ++j) t(i, j) = std::bit_cast<double>(get_u64(in));
    }
    tensors.emplace(std::move(name), std::move(t));
  }

  auto find = [&](const std::string& name) -> const Tensor& {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error("checkpoint is missing tensor " + name);
    return it->second;
  };
  ParamSet p;
  p.dims.features = static_cast<std::size_t>(find("theta.encoder.w1").rows());
  p.dims.hidden = static_cast<std::size_t>(find("theta.encoder.w1").cols());
  p.dims.predictor = static_cast<std::size_t>(find("theta.predictor.w1").cols());
  p.dims.ways = static_cast<std::size_t>(find("theta.classifier.w").cols());
  const ParamSet expected = init_params(p.dims, 0);
  for_each_tensor(p, [&](const std::string& name, Tensor& t) {
    t = find(name);
    Tensor shape_ref;
    for_each_tensor(expected, [&](const std::string& other, const Tensor& e) {
      if (other == name) shape_ref = e;
    });
    if (t.rows() != shape_ref.rows() || t.cols() != shape_ref.cols()) {
      throw Error("checkpoint tensor " + name + " has an inconsistent shape");
    }
  });
  if (tensors.size() != count || count != 10) throw Error("checkpoint has unexpected tensors");
  return p;
}

}  // namespace xfnc::nn
