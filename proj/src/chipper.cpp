#include "freeflow/chipper.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

namespace freeflow {

void GeoRaster::validate() const {
  if (image.height < 1 || image.width < 1) throw DomainError("raster must be at least 1x1");
  if (!(pixel_size_m > 0.0)) throw DomainError("pixel_size_m must be positive");
}

void ChipSpec::validate() const {
  if (!(extent_m > 0.0)) throw DomainError("chip extent_m must be positive");
  if (out_px < 1) throw DomainError("chip out_px must be at least 1");
  if (!(heading_rad >= 0.0 && heading_rad < 2.0 * std::numbers::pi)) {
    throw DomainError("heading_rad must lie in [0, 2*pi)");
  }
}

double heading_from_geometry(const std::vector<Point>& geometry) {
  if (geometry.size() < 2) {
    throw DomainError("heading_from_geometry: need at least 2 points");
  }
  double dx = geometry[1].x - geometry[0].x;
  double dy = geometry[1].y - geometry[0].y;
  if (dx == 0.0 && dy == 0.0) {
    throw DomainError("heading_from_geometry: first two points coincide");
  }
  double h = std::atan2(dx, dy);  // clockwise from north (+y)
  if (h < 0.0) h += 2.0 * std::numbers::pi;
  if (h >= 2.0 * std::numbers::pi) h = 0.0;
  return h;
}

namespace {

// Bilinear sample at world point (wx, wy); false when the point lies outside
// the raster extent.
bool sample_bilinear(const GeoRaster& raster, double wx, double wy, double rgb[3]) {
  const double ps = raster.pixel_size_m;
  const int w = raster.image.width;
  const int h = raster.image.height;
  if (wx < raster.origin.x || wx > raster.origin.x + w * ps ||
      wy > raster.origin.y || wy < raster.origin.y - h * ps) {
    return false;
  }
  // Fractional pixel-center coordinates; pixel (r, c) sits at
  // origin + ((c + 0.5) * ps, -(r + 0.5) * ps).
  double fc = (wx - raster.origin.x) / ps - 0.5;
  double fr = (raster.origin.y - wy) / ps - 0.5;
  int c0 = static_cast<int>(std::floor(fc));
  int r0 = static_cast<int>(std::floor(fr));
  double tc = fc - c0;
  double tr = fr - r0;
  // Clamp neighbors so in-extent points near the border edge-extend.
  int c1 = std::clamp(c0 + 1, 0, w - 1);
  int r1 = std::clamp(r0 + 1, 0, h - 1);
  c0 = std::clamp(c0, 0, w - 1);
  r0 = std::clamp(r0, 0, h - 1);
  const auto* p00 = raster.image.px(r0, c0);
  const auto* p01 = raster.image.px(r0, c1);
  const auto* p10 = raster.image.px(r1, c0);
  const auto* p11 = raster.image.px(r1, c1);
  for (int ch = 0; ch < 3; ++ch) {
    double top = p00[ch] + tc * (p01[ch] - p00[ch]);
    double bot = p10[ch] + tc * (p11[ch] - p10[ch]);
    rgb[ch] = top + tr * (bot - top);
  }
  return true;
}

}  // namespace

Image8 extract_chip(const GeoRaster& raster, const ChipSpec& spec) {
  raster.validate();
  spec.validate();

  const int n = spec.out_px;
  const double extent = spec.extent_m;
  // Travel direction and its clockwise-perpendicular (chip "right").
  const double dir_x = std::sin(spec.heading_rad);
  const double dir_y = std::cos(spec.heading_rad);
  const double right_x = dir_y;
  const double right_y = -dir_x;

  Image8 chip(n, n);
  std::size_t outside = 0;
  for (int r = 0; r < n; ++r) {
    double up = (0.5 - (r + 0.5) / n) * extent;
    for (int c = 0; c < n; ++c) {
      double across = ((c + 0.5) / n - 0.5) * extent;
      double wx = spec.center.x + across * right_x + up * dir_x;
      double wy = spec.center.y + across * right_y + up * dir_y;
      double rgb[3];
      if (sample_bilinear(raster, wx, wy, rgb)) {
        auto* p = chip.px(r, c);
        for (int ch = 0; ch < 3; ++ch) {
          p[ch] = static_cast<std::uint8_t>(
              std::clamp(std::floor(rgb[ch] + 0.5), 0.0, 255.0));
        }
      } else {
        ++outside;  // black fill
      }
    }
  }
  std::size_t total = static_cast<std::size_t>(n) * n;
  if (outside * 2 > total) {
    throw CoverageError("extract_chip: " + std::to_string(outside) + " of " +
                        std::to_string(total) +
                        " samples fall outside the raster (over 50%)");
  }
  return chip;
}

std::vector<float> to_unit_image(const Image8& chip) {
  std::vector<float> out(chip.pixels.size());
  for (std::size_t i = 0; i < chip.pixels.size(); ++i) {
    out[i] = static_cast<float>(chip.pixels[i]) / 255.0f;
  }
  return out;
}

void write_raster(const GeoRaster& raster, const std::filesystem::path& png_path) {
  raster.validate();
  write_png(raster.image, png_path);
  nlohmann::ordered_json j;
  j["origin"] = {raster.origin.x, raster.origin.y};
  j["pixel_size_m"] = raster.pixel_size_m;
  auto sidecar = png_path;
  sidecar.replace_extension(".json");
  std::ofstream out(sidecar, std::ios::binary);
  if (!out) throw IoError("cannot write raster sidecar " + sidecar.string());
  out << j.dump(2) << "\n";
}

GeoRaster read_raster(const std::filesystem::path& png_path) {
  GeoRaster raster;
  raster.image = read_png(png_path);
  auto sidecar = png_path;
  sidecar.replace_extension(".json");
  std::ifstream in(sidecar);
  if (!in) throw IoError("cannot open raster sidecar " + sidecar.string());
  nlohmann::json j;
  try {
    in >> j;
    raster.origin.x = j.at("origin").at(0).get<double>();
    raster.origin.y = j.at("origin").at(1).get<double>();
    raster.pixel_size_m = j.at("pixel_size_m").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DomainError("raster sidecar " + sidecar.string() + ": " + e.what());
  }
  raster.validate();
  return raster;
}

}  // namespace freeflow
