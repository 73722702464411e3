#include "dpet/io.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dpet {

namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

void write_f32_le(std::ostream& os, const Eigen::MatrixXd& values) {
  std::vector<char> buf(static_cast<std::size_t>(values.size()) * 4);
  std::size_t k = 0;
  // Column-major storage: frame after frame.
  for (Index i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values.data()[i]));
    buf[k++] = static_cast<char>(bits & 0xffu);
    buf[k++] = static_cast<char>((bits >> 8) & 0xffu);
    buf[k++] = static_cast<char>((bits >> 16) & 0xffu);
    buf[k++] = static_cast<char>((bits >> 24) & 0xffu);
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

Eigen::MatrixXd read_f32_le(std::istream& is, Index rows, Index cols) {
  Eigen::MatrixXd values(rows, cols);
  std::vector<unsigned char> buf(static_cast<std::size_t>(rows * cols) * 4);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (is.gcount() != static_cast<std::streamsize>(buf.size()))
    throw std::runtime_error("dpt: truncated payload");
  for (Index i = 0; i < values.size(); ++i) {
    const auto* b = &buf[static_cast<std::size_t>(i) * 4];
    const std::uint32_t bits = std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) |
                               (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
    values.data()[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return values;
}

json base_header(std::string_view kind) {
  return json{{"format", "dpt"}, {"version", kFormatVersion}, {"kind", kind},
              {"dtype", "float32-le"}, {"layout", "frame-major"}};
}

void write_header(std::ostream& os, const json& header) { os << header.dump() << '\n'; }

void expect_kind(const json& header, std::string_view kind) {
  if (header.value("format", "") != "dpt") throw std::runtime_error("dpt: not a .dpt stream");
  if (header.value("kind", "") != kind)
    throw std::runtime_error("dpt: expected kind '" + std::string(kind) + "', found '" +
                             header.value("kind", "") + "'");
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return is;
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json schedule_to_json(const FrameSchedule& schedule) {
  return json{{"starts", schedule.starts()}, {"durations", schedule.durations()}};
}

FrameSchedule schedule_from_json(const json& j) {
  return {j.at("starts").get<std::vector<double>>(), j.at("durations").get<std::vector<double>>()};
}

void write_dpt(std::ostream& os, const DynamicImage& image) {
  json h = base_header("image");
  h["width"] = image.width();
  h["height"] = image.height();
  h["frames"] = image.n_frames();
  h["schedule"] = schedule_to_json(image.schedule());
  h["units"] = "kBq/mL";
  h["time_units"] = "s";
  write_header(os, h);
  write_f32_le(os, image.values());
}

void write_dpt(std::ostream& os, const SinogramSeries& sino) {
  json h = base_header("sinogram");
  h["bins"] = sino.n_bins();
  h["frames"] = sino.n_frames();
  h["schedule"] = schedule_to_json(sino.schedule());
  h["frame_scale"] = std::vector<double>(sino.frame_scale().data(),
                                         sino.frame_scale().data() + sino.frame_scale().size());
  h["expectation"] = sino.is_expectation();
  h["units"] = "counts";
  h["blocks"] = {"counts", "background"};
  write_header(os, h);
  write_f32_le(os, sino.counts());
  write_f32_le(os, sino.background());
}

void write_dpt(std::ostream& os, const ParametricMaps& maps) {
  json h = base_header("maps");
  h["width"] = maps.width();
  h["height"] = maps.height();
  h["params"] = {"K1", "k2", "k3", "fv", "Ki"};
  h["units"] = {"1/s", "1/s", "1/s", "1", "1/s"};
  write_header(os, h);
  Eigen::MatrixXd planes(maps.n_voxels(), kNumParams + 1);
  planes.leftCols(kNumParams) = maps.values();
  planes.col(kNumParams) = maps.ki_map();
  write_f32_le(os, planes);
}

json read_dpt_header(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("dpt: missing header line");
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("dpt: bad header: ") + e.what());
  }
}

DynamicImage read_image_dpt(std::istream& is) {
  const json h = read_dpt_header(is);
  expect_kind(h, "image");
  const Index w = h.at("width"), ht = h.at("height"), m = h.at("frames");
  auto schedule = schedule_from_json(h.at("schedule"));
  auto values = read_f32_le(is, w * ht, m);
  return {w, ht, std::move(schedule), std::move(values)};
}

SinogramSeries read_sinogram_dpt(std::istream& is) {
  const json h = read_dpt_header(is);
  expect_kind(h, "sinogram");
  const Index bins = h.at("bins"), m = h.at("frames");
  auto schedule = schedule_from_json(h.at("schedule"));
  const auto scale = h.at("frame_scale").get<std::vector<double>>();
  Eigen::VectorXd frame_scale = Eigen::Map<const Eigen::VectorXd>(scale.data(), static_cast<Index>(scale.size()));
  auto counts = read_f32_le(is, bins, m);
  auto background = read_f32_le(is, bins, m);
  if (h.value("expectation", false))
    return SinogramSeries::expected(std::move(schedule), std::move(counts), std::move(background),
                                    std::move(frame_scale));
  return {std::move(schedule), std::move(counts), std::move(background), std::move(frame_scale)};
}

ParametricMaps read_maps_dpt(std::istream& is) {
  const json h = read_dpt_header(is);
  expect_kind(h, "maps");
  const Index w = h.at("width"), ht = h.at("height");
  const auto names = h.at("params").get<std::vector<std::string>>();
  auto planes = read_f32_le(is, w * ht, static_cast<Index>(names.size()));
  Eigen::MatrixXd values(w * ht, kNumParams);
  for (int p = 0; p < kNumParams; ++p) {
    const auto it = std::find(names.begin(), names.end(), kParamNames[static_cast<std::size_t>(p)]);
    if (it == names.end())
      throw std::runtime_error("dpt: maps file lacks parameter " + std::string(kParamNames[static_cast<std::size_t>(p)]));
    values.col(p) = planes.col(it - names.begin());
  }
  return {w, ht, std::move(values)};
}

void write_dpt(const std::filesystem::path& path, const DynamicImage& image) {
  auto os = open_out(path);
  write_dpt(os, image);
}
void write_dpt(const std::filesystem::path& path, const SinogramSeries& sino) {
  auto os = open_out(path);
  write_dpt(os, sino);
}
void write_dpt(const std::filesystem::path& path, const ParametricMaps& maps) {
  auto os = open_out(path);
  write_dpt(os, maps);
}
json read_dpt_header(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_dpt_header(is);
}
DynamicImage read_image_dpt(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_image_dpt(is);
}
SinogramSeries read_sinogram_dpt(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_sinogram_dpt(is);
}
ParametricMaps read_maps_dpt(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_maps_dpt(is);
}

void write_csv(std::ostream& os, const CsvTable& table) {
  auto line = [&os](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
    os << '\n';
  };
  line(table.header);
  for (const auto& row : table.rows) line(row);
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  auto os = open_out(path);
  write_csv(os, table);
}

CsvTable read_csv(std::istream& is) {
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
  };
  CsvTable table;
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("csv: empty input");
  table.header = split(line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    table.rows.push_back(split(line));
  }
  return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_csv(is);
}

void write_pgm(const std::filesystem::path& path, Index width, Index height,
               const std::vector<std::uint8_t>& pixels) {
  if (static_cast<Index>(pixels.size()) != width * height)
    throw std::invalid_argument("pgm: pixel count mismatch");
  auto os = open_out(path);
  os << "P5\n" << width << ' ' << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

void write_map_csv(const std::filesystem::path& path, Index width, Index height,
                   const Eigen::Ref<const Eigen::VectorXd>& values) {
  CsvTable t{{"x", "y", "value"}, {}};
  t.rows.reserve(static_cast<std::size_t>(width * height));
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x)
      t.rows.push_back({std::to_string(x), std::to_string(y), format_double(values(y * width + x))});
  write_csv(path, t);
}

}  // namespace dpet
