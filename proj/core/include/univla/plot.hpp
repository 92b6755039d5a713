#pragma once

#include "univla/image.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace univla {

/// RGB raster canvas for report plots; origin top-left.
struct Canvas {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;

    Canvas(int w, int h, std::uint8_t r = 255, std::uint8_t g = 255, std::uint8_t b = 255);

    void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b);
    void fill_rect(int x0, int y0, int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b);
    void line(int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g, std::uint8_t b);
    /// 5×7 bitmap font, uppercased; unknown glyphs render as blanks.
    void text(int x, int y, const std::string& s, std::uint8_t r, std::uint8_t g, std::uint8_t b,
              int scale = 1);
};

void save_ppm(const std::filesystem::path& path, const Canvas& canvas);
void save_image_ppm(const std::filesystem::path& path, const Image& img);

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> points; // (x, y)
};

/// Multi-series line chart with axes, ticks, and a legend.
void line_plot(const std::filesystem::path& path, const std::vector<Series>& series,
               const std::string& title, const std::string& x_label, const std::string& y_label,
               int width = 720, int height = 480);

/// Labeled vertical bars; y starts at zero (or the minimum if negative).
void bar_plot(const std::filesystem::path& path,
              const std::vector<std::pair<std::string, double>>& bars, const std::string& title,
              const std::string& y_label, int width = 720, int height = 480);

} // namespace univla
