#include <array>
#include <charconv>
#include <cstring>
#include <istream>
#include <ostream>
#include <string_view>

#include <fmt/format.h>

#include "capsnlstm/binary_io.hpp"
#include "capsnlstm/grid_raster.hpp"

namespace capsnlstm::raster {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

template <typename Num>
bool parse_number(std::string_view text, Num& out) {
  text = trim(text);
  if (text.empty()) return false;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

[[noreturn]] void fail(const char* what, std::size_t line, const std::string& msg) {
  throw DataError(fmt::format("{} line {}: {}", what, line, msg));
}

}  // namespace

std::vector<LinkGeometry> read_network_geometry(std::istream& in) {
  std::vector<LinkGeometry> links;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto comma = line.find(',');
    if (comma == std::string_view::npos) fail("network geometry", line_no, "expected `link_id, lat lon; ...`");
    LinkGeometry link;
    if (!parse_number(line.substr(0, comma), link.id.value)) fail("network geometry", line_no, "bad link id");
    std::string_view rest = line.substr(comma + 1);
    while (!rest.empty()) {
      const auto semi = rest.find(';');
      const auto vertex = trim(rest.substr(0, semi));
      rest = semi == std::string_view::npos ? std::string_view{} : rest.substr(semi + 1);
      if (vertex.empty()) continue;
      const auto space = vertex.find_first_of(" \t");
      GeoPoint p;
      if (space == std::string_view::npos || !parse_number(vertex.substr(0, space), p.lat) ||
          !parse_number(vertex.substr(space + 1), p.lon))
        fail("network geometry", line_no, fmt::format("bad vertex `{}`", vertex));
      link.polyline.push_back(p);
    }
    if (link.polyline.size() < 2) fail("network geometry", line_no, "a link needs at least 2 vertices");
    links.push_back(std::move(link));
  }
  if (links.empty()) throw DataError("network geometry: no links");
  return links;
}

void write_network_geometry(std::ostream& out, const RoadNetwork& network) {
  for (const auto& link : network.links()) {
    out << link.id.value << ",";
    for (std::size_t i = 0; i < link.polyline.size(); ++i)
      out << (i ? "; " : " ") << fmt::format("{} {}", link.polyline[i].lat, link.polyline[i].lon);
    out << "\n";
  }
}

std::vector<SpeedRecord> read_speed_records(std::istream& in) {
  std::string raw;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::vector<SpeedRecord> out;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != "link_id,timestamp,speed_kmh")
        fail("speed records", line_no, "expected header `link_id,timestamp,speed_kmh`");
      header_seen = true;
      continue;
    }
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string_view::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string_view::npos || line.find(',', c2 + 1) != std::string_view::npos)
      fail("speed records", line_no, "expected 3 comma-separated fields");
    SpeedRecord r;
    if (!parse_number(line.substr(0, c1), r.link.value)) fail("speed records", line_no, "bad link_id");
    if (!parse_number(line.substr(c1 + 1, c2 - c1 - 1), r.timestamp)) fail("speed records", line_no, "bad timestamp");
    if (!parse_number(line.substr(c2 + 1), r.speed)) fail("speed records", line_no, "bad speed_kmh");
    out.push_back(r);
  }
  if (!header_seen) throw DataError("no records");
  return out;
}

void write_speed_records(std::ostream& out, std::span<const SpeedRecord> records) {
  out << "link_id,timestamp,speed_kmh\n";
  for (const auto& r : records) out << fmt::format("{},{},{}\n", r.link.value, r.timestamp, r.speed);
}

void write_frame_archive(std::ostream& out, std::span<const SpeedFrame> frames) {
  const GridDims dims = frames.empty() ? GridDims{} : frames.front().dims;
  for (const auto& f : frames)
    if (f.dims != dims || f.values.size() != dims.rows * dims.cols)
      throw ContractError("frame archive: frames must share one grid size");
  out.write("SFR1", 4);
  io::write_u32(out, static_cast<std::uint32_t>(dims.rows));
  io::write_u32(out, static_cast<std::uint32_t>(dims.cols));
  io::write_u32(out, static_cast<std::uint32_t>(frames.size()));
  for (const auto& f : frames) {
    io::write_i64(out, f.timestamp);
    for (double v : f.values) io::write_f32(out, static_cast<float>(v));
  }
  if (!out) throw DataError("frame archive: write failed");
}

std::vector<SpeedFrame> read_frame_archive(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || std::memcmp(magic.data(), "SFR1", 4) != 0) throw DataError("frame archive: bad magic (expected SFR1)");
  GridDims dims;
  dims.rows = io::read_u32(in);
  dims.cols = io::read_u32(in);
  const auto count = io::read_u32(in);
  if (!in) throw DataError("frame archive: truncated header");
  std::vector<SpeedFrame> frames(count);
  for (auto& f : frames) {
    f.dims = dims;
    f.timestamp = io::read_i64(in);
    f.values.resize(dims.rows * dims.cols);
    for (auto& v : f.values) v = io::read_f32(in);
    if (!in) throw DataError("frame archive: truncated frame data");
  }
  return frames;
}

}  // namespace capsnlstm::raster
