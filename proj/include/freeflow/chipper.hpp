#pragma once

#include <filesystem>
#include <vector>

#include "freeflow/core.hpp"
#include "freeflow/image.hpp"

namespace freeflow {

/// Georeferenced overhead raster in a local metric frame. `origin` is the
/// world coordinate of the top-left pixel corner; world y grows northward,
/// pixel rows grow southward.
struct GeoRaster {
  Image8 image;
  Point origin;
  double pixel_size_m = 1.0;

  void validate() const;
  double width_m() const { return image.width * pixel_size_m; }
  double height_m() const { return image.height * pixel_size_m; }
};

/// Geometry of one chip: a square ground window rotated travel-direction-up.
struct ChipSpec {
  Point center;
  double heading_rad = 0.0;  // clockwise from north (+y)
  double extent_m = 400.0;
  int out_px = 224;

  void validate() const;
};

/// Clockwise-from-north heading of the first geometry edge, in [0, 2*pi).
double heading_from_geometry(const std::vector<Point>& geometry);

/// Bilinear sample of the raster over the rotated window. Out-of-bounds
/// samples fill with black; more than 50% out of bounds is a CoverageError.
Image8 extract_chip(const GeoRaster& raster, const ChipSpec& spec);

/// Channel values divided by 255, laid out like the chip (H*W*3).
std::vector<float> to_unit_image(const Image8& chip);

/// Raster on disk: PNG plus a sidecar JSON carrying origin and pixel_size_m.
void write_raster(const GeoRaster& raster, const std::filesystem::path& png_path);
GeoRaster read_raster(const std::filesystem::path& png_path);

}  // namespace freeflow
