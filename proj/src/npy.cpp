#include "basnet/npy.hpp"

#include <fstream>
#include <regex>
#include <sstream>

#include "basnet/core.hpp"

namespace basnet::npy {

namespace {

constexpr char kMagic[] = "\x93NUMPY";

std::string descr_of(torch::Dtype dtype) {
  switch (dtype) {
    case torch::kFloat32:
      return "<f4";
    case torch::kFloat64:
      return "<f8";
    case torch::kInt64:
      return "<i8";
    default:
      throw Error("npy: unsupported dtype " + std::string(c10::toString(dtype)));
  }
}

torch::Dtype dtype_of(const std::string& descr) {
  if (descr == "<f4") return torch::kFloat32;
  if (descr == "<f8") return torch::kFloat64;
  if (descr == "<i8") return torch::kInt64;
  throw CorruptDataError("npy: unsupported descr '" + descr + "'");
}

}  // namespace

void write(const std::filesystem::path& path, const torch::Tensor& tensor) {
  const auto t = tensor.detach().to(torch::kCPU).contiguous();
  std::ostringstream shape;
  shape << '(';
  for (int64_t d = 0; d < t.dim(); ++d) {
    shape << t.size(d) << (t.dim() == 1 || d + 1 < t.dim() ? "," : "");
  }
  shape << ')';
  std::string header = "{'descr': '" + descr_of(t.scalar_type()) + "', 'fortran_order': False, 'shape': " +
                       shape.str() + ", }";
  // Magic (6) + version (2) + length (2) + header + '\n' must be a multiple of 64.
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');

  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error("cannot write " + path.string());
  }
  out.write(kMagic, 6);
  out.put(1);
  out.put(0);
  const auto len = static_cast<std::uint16_t>(header.size());
  out.put(static_cast<char>(len & 0xff));
  out.put(static_cast<char>(len >> 8));
  out << header;
  out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
}

torch::Tensor read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("cannot read " + path.string());
  }
  char magic[6];
  unsigned char version[2];
  unsigned char len_bytes[2];
  in.read(magic, 6);
  in.read(reinterpret_cast<char*>(version), 2);
  in.read(reinterpret_cast<char*>(len_bytes), 2);
  if (!in || std::string(magic, 6) != std::string(kMagic, 6) || version[0] != 1) {
    throw CorruptDataError(path.string() + " is not a version 1 .npy file");
  }
  std::string header(static_cast<std::size_t>(len_bytes[0] | (len_bytes[1] << 8)), '\0');
  in.read(header.data(), static_cast<std::streamsize>(header.size()));

  std::smatch m;
  if (!std::regex_search(header, m, std::regex(R"('descr':\s*'([^']+)')"))) {
    throw CorruptDataError(path.string() + ": header lacks descr");
  }
  const auto dtype = dtype_of(m[1]);
  if (std::regex_search(header, std::regex(R"('fortran_order':\s*True)"))) {
    throw CorruptDataError(path.string() + ": Fortran-ordered arrays are not supported");
  }
  if (!std::regex_search(header, m, std::regex(R"('shape':\s*\(([^)]*)\))"))) {
    throw CorruptDataError(path.string() + ": header lacks shape");
  }
  std::vector<int64_t> shape;
  std::istringstream dims(m[1].str());
  std::string dim;
  while (std::getline(dims, dim, ',')) {
    if (dim.find_first_not_of(" ") != std::string::npos) {
      shape.push_back(std::stoll(dim));
    }
  }
  auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
  in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
  if (!in) {
    throw CorruptDataError(path.string() + ": truncated data");
  }
  return t;
}

}  // namespace basnet::npy
