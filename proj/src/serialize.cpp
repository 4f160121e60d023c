#include "dimask/serialize.hpp"

#include <fstream>
#include <sstream>

#include "dimask/binio.hpp"

namespace dimask {

namespace binio {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path);
}

}  // namespace binio

std::string encode_parameters(const std::vector<NamedTensor>& params) {
  binio::Writer w;
  w.put_bytes(std::string_view(kCheckpointMagic, 8));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(params.size());
  for (const auto& [name, t] : params) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.put_bytes(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) w.put<std::uint64_t>(e);
    for (double v : t.data()) w.put<double>(v);
  }
  return w.bytes();
}

std::vector<NamedTensor> decode_parameters(const std::string& bytes) {
  binio::Reader r(bytes, "checkpoint");
  if (r.get_bytes(8) != std::string_view(kCheckpointMagic, 8)) r.fail("bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    r.fail("unsupported checkpoint version " + std::to_string(version) + " (expected " +
           std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = r.get<std::uint64_t>();
  std::vector<NamedTensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    std::string name(r.get_bytes(name_len));
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) r.fail("implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) e = r.get<std::uint64_t>();
    const std::size_t n = shape_numel(shape);
    if (n > bytes.size() / 8) r.fail("parameter " + name + " larger than the file");
    std::vector<double> values(n);
    for (auto& v : values) v = r.get<double>();
    out.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  if (!r.at_end()) r.fail("trailing bytes after last record");
  return out;
}

void save_parameters(const std::string& path, const std::vector<NamedTensor>& params) {
  binio::write_file(path, encode_parameters(params));
}

std::vector<NamedTensor> load_parameters(const std::string& path) {
  return decode_parameters(binio::read_file(path));
}

}  // namespace dimask
