#include <algorithm>
#include <array>
#include <bit>
#include <cstring>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "dgppu/error.hpp"
#include "dgppu/io.hpp"
#include "dgppu/model.hpp"

namespace dgppu {

namespace {

using ojson = nlohmann::ordered_json;

constexpr std::string_view kMagic = "DGPPUCKP";
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::string& out, T value) {
  auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.append(bytes.data(), bytes.size());
}

template <typename T>
T get_le(const std::string& data, std::size_t offset) {
  if (offset + sizeof(T) > data.size()) fail(ErrorKind::Corruption, "checkpoint truncated");
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), data.data() + offset, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

std::uint32_t crc_of(const char* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(size));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::string encode_checkpoint(const Network& net, const CheckpointMeta& meta) {
  ojson header;
  header["architecture"] = {{"edge_widths", net.arch.edge_widths},
                            {"head_hidden", net.arch.head_hidden},
                            {"k", net.arch.k},
                            {"slope", net.arch.slope},
                            {"input_dim", net.arch.input_dim},
                            {"classes", kNumClasses}};
  header["training"] = {{"seed", meta.seed},
                        {"best_epoch", meta.best_epoch},
                        {"epochs_run", meta.epochs_run},
                        {"n_points", meta.n_points},
                        {"scans", meta.training_scans}};
  header["parameter_count"] = net.params.size();
  header["byte_order"] = "little";
  header["dtype"] = "float64";
  const std::string text = header.dump();

  std::string out(kMagic);
  put_le(out, kVersion);
  put_le(out, static_cast<std::uint64_t>(text.size()));
  out += text;
  for (double v : net.params.flatten()) put_le(out, v);
  put_le(out, crc_of(out.data(), out.size()));
  return out;
}

Network decode_checkpoint(const std::string& bytes, CheckpointMeta* meta) {
  if (bytes.size() < kMagic.size() + 4 + 8 + 4 ||
      std::string_view(bytes).substr(0, kMagic.size()) != kMagic) {
    fail(ErrorKind::Corruption, "not a dgppu checkpoint");
  }
  const auto stored_crc = get_le<std::uint32_t>(bytes, bytes.size() - 4);
  if (crc_of(bytes.data(), bytes.size() - 4) != stored_crc) {
    fail(ErrorKind::Corruption, "checkpoint checksum mismatch");
  }
  std::size_t pos = kMagic.size();
  if (get_le<std::uint32_t>(bytes, pos) != kVersion) {
    fail(ErrorKind::Corruption, "unsupported checkpoint version");
  }
  pos += 4;
  const auto header_len = get_le<std::uint64_t>(bytes, pos);
  pos += 8;
  if (pos + header_len > bytes.size() - 4) fail(ErrorKind::Corruption, "checkpoint truncated");
  Network net;
  try {
    const auto header = ojson::parse(bytes.substr(pos, header_len));
    pos += header_len;
    const auto& a = header.at("architecture");
    net.arch.edge_widths = a.at("edge_widths").get<std::vector<std::size_t>>();
    net.arch.head_hidden = a.at("head_hidden").get<std::size_t>();
    net.arch.k = a.at("k").get<std::size_t>();
    net.arch.slope = a.at("slope").get<double>();
    net.arch.input_dim = a.at("input_dim").get<std::size_t>();
    if (a.at("classes").get<int>() != kNumClasses) {
      fail(ErrorKind::Validation, "checkpoint class count differs from 3");
    }
    net.arch.validate();
    if (meta) {
      const auto& t = header.at("training");
      meta->seed = t.at("seed").get<std::uint64_t>();
      meta->best_epoch = t.at("best_epoch").get<std::size_t>();
      meta->epochs_run = t.at("epochs_run").get<std::size_t>();
      meta->n_points = t.at("n_points").get<std::size_t>();
      meta->training_scans = t.at("scans").get<std::vector<std::string>>();
    }
    net.params = Parameters::zeros(net.arch);
    if (header.at("parameter_count").get<std::size_t>() != net.params.size()) {
      fail(ErrorKind::Corruption, "checkpoint parameter count does not match architecture");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Corruption, std::string("checkpoint header: ") + e.what());
  }
  const std::size_t count = net.params.size();
  if (bytes.size() - 4 - pos != count * sizeof(double)) {
    fail(ErrorKind::Corruption, "checkpoint parameter block has the wrong size");
  }
  std::vector<double> flat(count);
  for (std::size_t i = 0; i < count; ++i) flat[i] = get_le<double>(bytes, pos + i * 8);
  net.params.assign(flat);
  return net;
}

void save_checkpoint(const std::filesystem::path& path, const Network& net,
                     const CheckpointMeta& meta) {
  write_text_file(path, encode_checkpoint(net, meta));
}

Network load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta) {
  return decode_checkpoint(read_text_file(path), meta);
}

}  // namespace dgppu
