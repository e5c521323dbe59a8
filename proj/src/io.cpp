#include "dgppu/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgppu/error.hpp"

namespace dgppu {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) fail(ErrorKind::InvalidInput, "cannot format number");
  return std::string(buf, ptr);
}

double parse_double(std::string_view text, std::size_t line) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
    throw ParseError(line, "not a number: '" + std::string(text) + "'");
  }
  return value;
}

namespace {

long long parse_int(std::string_view text, std::size_t line) {
  long long value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
    throw ParseError(line, "not an integer: '" + std::string(text) + "'");
  }
  return value;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

void check_token(const std::string& token, const char* what) {
  if (token.empty() || token.find_first_of(", \t\r\n") != std::string::npos) {
    fail(ErrorKind::InvalidInput,
         std::string(what) + " must be non-empty without separators: '" + token + "'");
  }
}

constexpr std::string_view kCsvHeader = "x,y,z,label,scan_id,frame,u,v,artifact";

bool has_synthetic(const LabeledCloud& cloud) {
  return std::any_of(cloud.points.begin(), cloud.points.end(),
                     [](const WorldPoint& p) { return p.synthetic; });
}

BoneLabel label_or_schema_error(long long c, std::size_t row) {
  const auto label = label_from_code(static_cast<int>(c));
  if (!label || c != static_cast<int>(c)) {
    fail(ErrorKind::Schema,
         "row " + std::to_string(row) + ": unknown label code " + std::to_string(c));
  }
  return *label;
}

bool flag_or_parse_error(long long c, std::size_t line) {
  if (c != 0 && c != 1) throw ParseError(line, "flag must be 0 or 1");
  return c == 1;
}

}  // namespace

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, std::string_view text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) fail(ErrorKind::Io, "write failed for '" + path.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::Io, "cannot move into '" + path.string() + "': " + ec.message());
}

void save_cloud_csv(const fs::path& path, const LabeledCloud& cloud) {
  const bool synth = has_synthetic(cloud);
  std::string out(kCsvHeader);
  if (synth) out += ",synthetic";
  out += '\n';
  for (const auto& p : cloud.points) {
    check_token(p.provenance.scan_id, "scan_id");
    out += format_double(p.xyz.x()) + ',' + format_double(p.xyz.y()) + ',' +
           format_double(p.xyz.z()) + ',' + std::to_string(code(p.label)) + ',' +
           p.provenance.scan_id + ',' + std::to_string(p.provenance.frame_index) + ',' +
           format_double(p.provenance.u) + ',' + format_double(p.provenance.v) + ',' +
           (p.is_artifact ? '1' : '0');
    if (synth) out += p.synthetic ? ",1" : ",0";
    out += '\n';
  }
  write_text_file(path, out);
}

LabeledCloud load_cloud_csv(const fs::path& path) {
  const std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  bool synth = false;
  if (line == std::string(kCsvHeader) + ",synthetic") {
    synth = true;
  } else if (line != kCsvHeader) {
    throw ParseError(1, "unexpected header '" + line + "'");
  }
  const std::size_t columns = synth ? 10 : 9;

  LabeledCloud cloud;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != columns) {
      throw ParseError(line_no, "expected " + std::to_string(columns) + " fields, got " +
                                    std::to_string(f.size()));
    }
    WorldPoint p;
    p.xyz = Eigen::Vector3d(parse_double(f[0], line_no), parse_double(f[1], line_no),
                            parse_double(f[2], line_no));
    if (!p.xyz.allFinite()) throw ParseError(line_no, "non-finite coordinate");
    p.label = label_or_schema_error(parse_int(f[3], line_no), line_no - 1);
    p.provenance.scan_id = std::string(f[4]);
    if (p.provenance.scan_id.empty()) throw ParseError(line_no, "empty scan_id");
    p.provenance.frame_index = static_cast<int>(parse_int(f[5], line_no));
    p.provenance.u = parse_double(f[6], line_no);
    p.provenance.v = parse_double(f[7], line_no);
    p.is_artifact = flag_or_parse_error(parse_int(f[8], line_no), line_no);
    if (synth) p.synthetic = flag_or_parse_error(parse_int(f[9], line_no), line_no);
    cloud.points.push_back(std::move(p));
  }
  if (cloud.points.empty()) throw ParseError(line_no, "no data rows");
  cloud.source = cloud.points.front().provenance.scan_id;
  return cloud;
}

namespace {

template <typename T>
void put_le(std::string& out, T value) {
  auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  out.append(bytes.data(), bytes.size());
}

template <typename T>
T get_le(const char* data) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), data, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  return std::bit_cast<T>(bytes);
}

constexpr std::array<std::string_view, 11> kPlyProperties = {
    "property double x",   "property double y",     "property double z",
    "property uchar label", "property int scan",    "property int frame",
    "property double u",   "property double v",     "property uchar artifact",
    "property uchar synthetic", "end_header"};
constexpr std::size_t kPlyRecord = 3 * 8 + 1 + 4 + 4 + 2 * 8 + 1 + 1;

}  // namespace

void save_cloud_ply(const fs::path& path, const LabeledCloud& cloud) {
  check_token(cloud.source.empty() ? std::string("-") : cloud.source, "source");
  std::vector<std::string> scan_ids;
  std::map<std::string, std::int32_t> scan_index;
  for (const auto& p : cloud.points) {
    check_token(p.provenance.scan_id, "scan_id");
    if (scan_index.emplace(p.provenance.scan_id, static_cast<std::int32_t>(scan_ids.size()))
            .second) {
      scan_ids.push_back(p.provenance.scan_id);
    }
  }
  std::string out = "ply\nformat binary_little_endian 1.0\ncomment dgppu labeled cloud\n";
  out += "comment source " + (cloud.source.empty() ? std::string("-") : cloud.source) + "\n";
  for (std::size_t i = 0; i < scan_ids.size(); ++i) {
    out += "comment scan_id " + std::to_string(i) + " " + scan_ids[i] + "\n";
  }
  out += "element vertex " + std::to_string(cloud.points.size()) + "\n";
  for (auto prop : kPlyProperties) {
    out += prop;
    out += '\n';
  }
  for (const auto& p : cloud.points) {
    put_le(out, p.xyz.x());
    put_le(out, p.xyz.y());
    put_le(out, p.xyz.z());
    put_le(out, static_cast<std::uint8_t>(code(p.label)));
    put_le(out, scan_index.at(p.provenance.scan_id));
    put_le(out, static_cast<std::int32_t>(p.provenance.frame_index));
    put_le(out, p.provenance.u);
    put_le(out, p.provenance.v);
    put_le(out, static_cast<std::uint8_t>(p.is_artifact));
    put_le(out, static_cast<std::uint8_t>(p.synthetic));
  }
  write_text_file(path, out);
}

LabeledCloud load_cloud_ply(const fs::path& path) {
  const std::string data = read_text_file(path);
  if (data.empty()) throw ParseError(1, "empty file");
  std::size_t pos = 0;
  std::size_t line_no = 0;
  auto next_line = [&]() -> std::string {
    const auto end = data.find('\n', pos);
    if (end == std::string::npos) throw ParseError(line_no + 1, "truncated header");
    std::string line = data.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    return line;
  };
  if (next_line() != "ply") throw ParseError(1, "missing 'ply' magic");
  if (next_line() != "format binary_little_endian 1.0") {
    throw ParseError(2, "only binary_little_endian 1.0 is supported");
  }
  LabeledCloud cloud;
  std::map<std::int32_t, std::string> scan_ids;
  std::size_t count = 0;
  std::string line;
  while (true) {
    line = next_line();
    if (line.rfind("comment source ", 0) == 0) {
      cloud.source = line.substr(15);
      if (cloud.source == "-") cloud.source.clear();
    } else if (line.rfind("comment scan_id ", 0) == 0) {
      const auto f = split(std::string_view(line).substr(16), ' ');
      if (f.size() != 2) throw ParseError(line_no, "bad scan_id comment");
      scan_ids[static_cast<std::int32_t>(parse_int(f[0], line_no))] = std::string(f[1]);
    } else if (line.rfind("comment", 0) == 0) {
      continue;
    } else if (line.rfind("element vertex ", 0) == 0) {
      count = static_cast<std::size_t>(parse_int(std::string_view(line).substr(15), line_no));
      break;
    } else {
      throw ParseError(line_no, "unexpected header line '" + line + "'");
    }
  }
  for (auto expected : kPlyProperties) {
    if (next_line() != expected) {
      throw ParseError(line_no, "expected '" + std::string(expected) + "'");
    }
  }
  if (data.size() - pos != count * kPlyRecord) {
    throw ParseError(line_no + 1, "body size does not match vertex count");
  }
  cloud.points.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const char* r = data.data() + pos + i * kPlyRecord;
    WorldPoint p;
    p.xyz = Eigen::Vector3d(get_le<double>(r), get_le<double>(r + 8), get_le<double>(r + 16));
    p.label = label_or_schema_error(get_le<std::uint8_t>(r + 24), i + 1);
    const auto scan = get_le<std::int32_t>(r + 25);
    const auto it = scan_ids.find(scan);
    if (it == scan_ids.end()) {
      fail(ErrorKind::Schema, "row " + std::to_string(i + 1) + ": unknown scan index");
    }
    p.provenance.scan_id = it->second;
    p.provenance.frame_index = get_le<std::int32_t>(r + 29);
    p.provenance.u = get_le<double>(r + 33);
    p.provenance.v = get_le<double>(r + 41);
    p.is_artifact = get_le<std::uint8_t>(r + 49) != 0;
    p.synthetic = get_le<std::uint8_t>(r + 50) != 0;
    cloud.points.push_back(std::move(p));
  }
  return cloud;
}

void save_cloud(const fs::path& path, const LabeledCloud& cloud) {
  if (path.extension() == ".ply") {
    save_cloud_ply(path, cloud);
  } else {
    save_cloud_csv(path, cloud);
  }
}

LabeledCloud load_cloud(const fs::path& path) {
  return path.extension() == ".ply" ? load_cloud_ply(path) : load_cloud_csv(path);
}

std::string manifest_to_string(const ScanRecord& scan) {
  ojson j;
  j["format"] = "dgppu-manifest";
  j["version"] = 1;
  j["scan_id"] = scan.scan_id;
  j["position"] = std::string(to_string(scan.position));
  j["scan_kind"] = std::string(to_string(scan.kind));
  ojson frames = ojson::array();
  for (const auto& f : scan.frames) {
    const auto& t = f.transform;
    ojson jf;
    jf["frame_index"] = t.frame_index;
    jf["pixel_spacing"] = {t.sx, t.sy};
    ojson rot = ojson::array();
    for (int r = 0; r < 3; ++r) rot.push_back({t.rotation(r, 0), t.rotation(r, 1), t.rotation(r, 2)});
    jf["rotation"] = rot;
    jf["translation"] = {t.translation.x(), t.translation.y(), t.translation.z()};
    ojson u = ojson::array(), v = ojson::array(), label = ojson::array(),
          line = ojson::array(), artifact = ojson::array();
    for (const auto& p : f.points) {
      u.push_back(p.u);
      v.push_back(p.v);
      label.push_back(code(p.label));
      line.push_back(p.line_id);
      artifact.push_back(static_cast<int>(p.artifact));
    }
    jf["points"] = ojson{{"u", u}, {"v", v}, {"label", label}, {"line_id", line},
                         {"artifact", artifact}};
    frames.push_back(std::move(jf));
  }
  j["frames"] = std::move(frames);
  return j.dump(1) + "\n";
}

namespace {

std::size_t line_of_offset(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(
                 std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

}  // namespace

ScanRecord manifest_from_string(const std::string& text) {
  if (text.empty()) throw ParseError(1, "empty manifest");
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(line_of_offset(text, e.byte), e.what());
  }
  ScanRecord scan;
  try {
    if (j.at("format") != "dgppu-manifest" || j.at("version") != 1) {
      fail(ErrorKind::Schema, "not a version-1 dgppu manifest");
    }
    scan.scan_id = j.at("scan_id").get<std::string>();
    const auto pos = parse_position(j.at("position").get<std::string>());
    const auto kind = parse_scan_kind(j.at("scan_kind").get<std::string>());
    if (!pos || !kind) fail(ErrorKind::Schema, "bad position or scan_kind");
    scan.position = *pos;
    scan.kind = *kind;
    for (const auto& jf : j.at("frames")) {
      Frame f;
      f.transform.frame_index = jf.at("frame_index").get<int>();
      f.transform.sx = jf.at("pixel_spacing").at(0).get<double>();
      f.transform.sy = jf.at("pixel_spacing").at(1).get<double>();
      const auto& rot = jf.at("rotation");
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) f.transform.rotation(r, c) = rot.at(r).at(c).get<double>();
      }
      const auto& tr = jf.at("translation");
      f.transform.translation = {tr.at(0).get<double>(), tr.at(1).get<double>(),
                                 tr.at(2).get<double>()};
      const auto& pts = jf.at("points");
      const auto& u = pts.at("u");
      const std::size_t n = u.size();
      const auto& v = pts.at("v");
      const auto& label = pts.at("label");
      const auto& line = pts.at("line_id");
      const auto& artifact = pts.at("artifact");
      if (v.size() != n || label.size() != n || line.size() != n || artifact.size() != n) {
        fail(ErrorKind::Schema, "frame " + std::to_string(f.transform.frame_index) +
                                    ": point columns differ in length");
      }
      for (std::size_t i = 0; i < n; ++i) {
        FramePoint p;
        p.u = u[i].get<double>();
        p.v = v[i].get<double>();
        const auto lc = label_from_code(label[i].get<int>());
        if (!lc) {
          fail(ErrorKind::Schema, "frame " + std::to_string(f.transform.frame_index) +
                                      " point " + std::to_string(i) + ": unknown label code");
        }
        p.label = *lc;
        p.line_id = line[i].get<int>();
        const int a = artifact[i].get<int>();
        if (a < 0 || a > 2) fail(ErrorKind::Schema, "unknown artifact code");
        p.artifact = static_cast<ArtifactKind>(a);
        f.points.push_back(p);
      }
      scan.frames.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Schema, std::string("manifest: ") + e.what());
  }
  scan.validate();
  return scan;
}

void save_manifest(const fs::path& path, const ScanRecord& scan) {
  write_text_file(path, manifest_to_string(scan));
}

ScanRecord load_manifest(const fs::path& path) {
  return manifest_from_string(read_text_file(path));
}

std::size_t line_of_offset(std::string_view text, std::size_t byte) {
  const auto end = text.begin() + static_cast<std::ptrdiff_t>(std::min(byte, text.size()));
  return 1 + static_cast<std::size_t>(std::count(text.begin(), end, '\n'));
}

}  // namespace dgppu
