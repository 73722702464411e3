#pragma once

#include "dpet/core.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace dpet {

// .dpt files: one UTF-8 JSON header line, then little-endian float32 payload in
// frame-major order. Doubles are rounded to float32 on write.

void write_dpt(std::ostream& os, const DynamicImage& image);
void write_dpt(std::ostream& os, const SinogramSeries& sino);
/// Writes K1, k2, k3, fv and the derived Ki plane.
void write_dpt(std::ostream& os, const ParametricMaps& maps);

nlohmann::json read_dpt_header(std::istream& is);
DynamicImage read_image_dpt(std::istream& is);
SinogramSeries read_sinogram_dpt(std::istream& is);
ParametricMaps read_maps_dpt(std::istream& is);

void write_dpt(const std::filesystem::path& path, const DynamicImage& image);
void write_dpt(const std::filesystem::path& path, const SinogramSeries& sino);
void write_dpt(const std::filesystem::path& path, const ParametricMaps& maps);
nlohmann::json read_dpt_header(const std::filesystem::path& path);
DynamicImage read_image_dpt(const std::filesystem::path& path);
SinogramSeries read_sinogram_dpt(const std::filesystem::path& path);
ParametricMaps read_maps_dpt(const std::filesystem::path& path);

nlohmann::json schedule_to_json(const FrameSchedule& schedule);
FrameSchedule schedule_from_json(const nlohmann::json& j);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

/// Minimal CSV table: header row plus string cells. Cells never contain commas.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

void write_csv(std::ostream& os, const CsvTable& table);
void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(std::istream& is);
CsvTable read_csv(const std::filesystem::path& path);

/// Binary portable graymap (P5), row-major, 8-bit.
void write_pgm(const std::filesystem::path& path, Index width, Index height,
               const std::vector<std::uint8_t>& pixels);

/// One map plane as long-format CSV: x, y, value.
void write_map_csv(const std::filesystem::path& path, Index width, Index height,
                   const Eigen::Ref<const Eigen::VectorXd>& values);

}  // namespace dpet
