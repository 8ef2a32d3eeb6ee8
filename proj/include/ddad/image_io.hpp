#pragma once

// Binary PGM/PPM writers for visual inspection of generated samples:
// image batches are tiled into one grid, 2-D point batches are rasterized
// into a density map. Values in [-1, 1] map linearly to bytes 0..255.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "ddad/tensor.hpp"

namespace ddad {

namespace detail {

inline unsigned char to_byte(double v) {
  const double scaled = (std::max(-1.0, std::min(1.0, v)) + 1.0) * 0.5 * 255.0;
  return static_cast<unsigned char>(std::lround(scaled));
}

inline void write_pnm(const std::string& path, const std::string& magic, int width, int height,
                      const std::vector<unsigned char>& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out << magic << "\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed while writing '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw IoError("failed to move '" + tmp + "' into place at '" + path + "'");
  }
}

}  // namespace detail

// Grayscale image, input [H,W] or [1,H,W], values in [-1,1].
inline void write_pgm(const std::string& path, const Tensor& image) {
  Shape shape = image.shape();
  if (shape.size() == 3 && shape[0] == 1) shape = {shape[1], shape[2]};
  if (shape.size() != 2) {
    throw ShapeError("write_pgm: expected [H,W] or [1,H,W], got " + shape_str(image.shape()));
  }
  const int h = shape[0];
  const int w = shape[1];
  std::vector<unsigned char> bytes(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = detail::to_byte(image.values()[i]);
  detail::write_pnm(path, "P5", w, h, bytes);
}

// Color image, input [3,H,W] channel-planar, values in [-1,1].
inline void write_ppm(const std::string& path, const Tensor& image) {
  const Shape& shape = image.shape();
  if (shape.size() != 3 || shape[0] != 3) {
    throw ShapeError("write_ppm: expected [3,H,W], got " + shape_str(shape));
  }
  const int h = shape[1];
  const int w = shape[2];
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<unsigned char> bytes(plane * 3);
  for (std::size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) {
      bytes[p * 3 + c] = detail::to_byte(image.values()[c * plane + p]);
    }
  }
  detail::write_pnm(path, "P6", w, h, bytes);
}

// Tiles a batch [N,C,H,W] (C = 1 or 3) into one [C, rows*H, cols*W] image,
// row-major, unused cells black (-1).
inline Tensor tile_images(const Tensor& batch, int cols) {
  const Shape& shape = batch.shape();
  if (shape.size() != 4 || (shape[1] != 1 && shape[1] != 3)) {
    throw ShapeError("tile_images: expected [N,1,H,W] or [N,3,H,W], got " + shape_str(shape));
  }
  if (cols < 1) throw ValueError("tile_images: cols must be >= 1");
  const int n = shape[0], c = shape[1], h = shape[2], w = shape[3];
  const int rows = (n + cols - 1) / cols;
  Shape out_shape = {c, rows * h, cols * w};
  std::vector<double> out(static_cast<std::size_t>(shape_numel(out_shape)), -1.0);
  const int oh = rows * h;
  const int ow = cols * w;
  (void)oh;
  for (int i = 0; i < n; ++i) {
    const int r0 = (i / cols) * h;
    const int c0 = (i % cols) * w;
    for (int ch = 0; ch < c; ++ch) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const std::size_t src = ((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x;
          const std::size_t dst =
              (static_cast<std::size_t>(ch) * rows * h + r0 + y) * ow + c0 + x;
          out[dst] = batch.values()[src];
        }
      }
    }
  }
  return Tensor::from_values(out_shape, out);
}

// Rasterizes 2-D points in [-1,1]^2 into a density image: brightness grows
// with the number of points landing in a cell. Points outside the square are
// clamped onto the border.
inline Tensor rasterize_points(const Tensor& points, int resolution = 128) {
  const Shape& shape = points.shape();
  if (shape.size() != 2 || shape[1] != 2) {
    throw ShapeError("rasterize_points: expected [N,2], got " + shape_str(shape));
  }
  if (resolution < 2) throw ValueError("rasterize_points: resolution must be >= 2");
  std::vector<int> counts(static_cast<std::size_t>(resolution) * resolution, 0);
  const int n = shape[0];
  int max_count = 0;
  for (int i = 0; i < n; ++i) {
    const double x = points.values()[static_cast<std::size_t>(i) * 2];
    const double y = points.values()[static_cast<std::size_t>(i) * 2 + 1];
    int col = static_cast<int>((x + 1.0) * 0.5 * (resolution - 1) + 0.5);
    int row = static_cast<int>((1.0 - (y + 1.0) * 0.5) * (resolution - 1) + 0.5);
    col = std::max(0, std::min(resolution - 1, col));
    row = std::max(0, std::min(resolution - 1, row));
    const std::size_t idx = static_cast<std::size_t>(row) * resolution + col;
    max_count = std::max(max_count, ++counts[idx]);
  }
  std::vector<double> out(counts.size(), -1.0);
  if (max_count > 0) {
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (counts[i] > 0) {
        out[i] = -1.0 + 2.0 * (static_cast<double>(counts[i]) / max_count);
      }
    }
  }
  return Tensor::from_values({resolution, resolution}, out);
}

// Writes a generated batch to disk in the right format for its shape:
// [N,2] point batches become a scatter PGM, [N,1,H,W] a tiled PGM,
// [N,3,H,W] a tiled PPM. Returns the path actually written.
inline std::string write_sample_dump(const std::string& path_without_ext, const Tensor& batch) {
  const Shape& shape = batch.shape();
  if (shape.size() == 2 && shape[1] == 2) {
    const std::string path = path_without_ext + ".pgm";
    write_pgm(path, rasterize_points(batch));
    return path;
  }
  if (shape.size() == 4 && shape[1] == 1) {
    const std::string path = path_without_ext + ".pgm";
    const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(shape[0]))));
    write_pgm(path, tile_images(batch, std::max(1, cols)));
    return path;
  }
  if (shape.size() == 4 && shape[1] == 3) {
    const std::string path = path_without_ext + ".ppm";
    const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(shape[0]))));
    write_ppm(path, tile_images(batch, std::max(1, cols)));
    return path;
  }
  throw ShapeError("write_sample_dump: unsupported sample shape " + shape_str(shape));
}

}  // namespace ddad
