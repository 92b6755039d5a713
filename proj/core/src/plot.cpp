#include "univla/plot.hpp"

#include "univla/common.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace univla {

namespace {

struct Glyph {
    char c;
    std::uint8_t rows[7]; // 5 bits per row, MSB left
};

constexpr Glyph kFont[] = {
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
    {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
    {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
    {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
    {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
    {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
    {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
    {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
    {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
    {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
    {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
    {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
    {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
    {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
    {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
    {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
    {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
    {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}},
    {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}},
    {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
    {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}},
    {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
    {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
    {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
    {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}},
    {'%', {0x19, 0x19, 0x02, 0x04, 0x08, 0x13, 0x13}},
    {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
    {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
    {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
};

const Glyph* find_glyph(char c) {
    const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    for (const auto& g : kFont)
        if (g.c == u) return &g;
    return nullptr;
}

struct Color {
    std::uint8_t r, g, b;
};

constexpr Color kSeriesPalette[] = {
    {204, 37, 41}, {57, 106, 177}, {62, 150, 81}, {218, 124, 48}, {107, 76, 154}, {83, 81, 84},
};
constexpr int kPaletteSize = static_cast<int>(sizeof(kSeriesPalette) / sizeof(Color));

std::string fmt_tick(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

struct Range {
    double lo, hi;
    double span() const { return hi - lo; }
};

Range pad_range(double lo, double hi) {
    if (!(lo <= hi)) std::swap(lo, hi);
    if (hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    return {lo, hi};
}

} // namespace

Canvas::Canvas(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b)
    : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3) {
    for (std::size_t i = 0; i < rgb.size(); i += 3) {
        rgb[i] = r;
        rgb[i + 1] = g;
        rgb[i + 2] = b;
    }
}

void Canvas::set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    rgb[i] = r;
    rgb[i + 1] = g;
    rgb[i + 2] = b;
}

void Canvas::fill_rect(int x0, int y0, int w, int h, std::uint8_t r, std::uint8_t g,
                       std::uint8_t b) {
    for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x) set(x, y, r, g, b);
}

void Canvas::line(int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        set(x0, y0, r, g, b);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

void Canvas::text(int x, int y, const std::string& s, std::uint8_t r, std::uint8_t g,
                  std::uint8_t b, int scale) {
    int cx = x;
    for (char c : s) {
        if (const Glyph* glyph = find_glyph(c)) {
            for (int row = 0; row < 7; ++row)
                for (int col = 0; col < 5; ++col)
                    if (glyph->rows[row] & (1 << (4 - col)))
                        fill_rect(cx + col * scale, y + row * scale, scale, scale, r, g, b);
        }
        cx += 6 * scale;
    }
}

void save_ppm(const std::filesystem::path& path, const Canvas& canvas) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "P6\n" << canvas.width << ' ' << canvas.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(canvas.rgb.data()),
             static_cast<std::streamsize>(canvas.rgb.size()));
    if (!os) throw IoError("short write: " + path.string());
}

void save_image_ppm(const std::filesystem::path& path, const Image& img) {
    Canvas canvas(img.width, img.height);
    const std::vector<std::uint8_t> bytes = image_to_bytes(img);
    canvas.rgb = bytes;
    save_ppm(path, canvas);
}

namespace {

struct Frame {
    int left, right, top, bottom; // plot area in pixels
    Range xr, yr;

    int px(double x) const {
        return left + static_cast<int>(std::lround((x - xr.lo) / xr.span() * (right - left)));
    }
    int py(double y) const {
        return bottom - static_cast<int>(std::lround((y - yr.lo) / yr.span() * (bottom - top)));
    }
};

void draw_axes(Canvas& canvas, const Frame& f, const std::string& title,
               const std::string& x_label, const std::string& y_label) {
    canvas.line(f.left, f.top, f.left, f.bottom, 0, 0, 0);
    canvas.line(f.left, f.bottom, f.right, f.bottom, 0, 0, 0);
    constexpr int kTicks = 5;
    for (int i = 0; i <= kTicks; ++i) {
        const double tx = f.xr.lo + f.xr.span() * i / kTicks;
        const double ty = f.yr.lo + f.yr.span() * i / kTicks;
        const int x = f.px(tx);
        const int y = f.py(ty);
        canvas.line(x, f.bottom, x, f.bottom + 4, 0, 0, 0);
        canvas.text(x - 10, f.bottom + 8, fmt_tick(tx), 0, 0, 0);
        canvas.line(f.left - 4, y, f.left, y, 0, 0, 0);
        canvas.text(4, y - 3, fmt_tick(ty), 0, 0, 0);
    }
    canvas.text(f.left, 8, title, 0, 0, 0);
    canvas.text(f.right - 6 * static_cast<int>(x_label.size()), f.bottom + 20, x_label, 0, 0, 0);
    canvas.text(4, f.top - 12, y_label, 0, 0, 0);
}

} // namespace

void line_plot(const std::filesystem::path& path, const std::vector<Series>& series,
               const std::string& title, const std::string& x_label, const std::string& y_label,
               int width, int height) {
    if (series.empty()) throw InvalidArgument("line plot needs at least one series");
    double xlo = 0, xhi = 0, ylo = 0, yhi = 0;
    bool first = true;
    for (const auto& s : series) {
        if (s.points.empty()) throw InvalidArgument("empty series: " + s.name);
        for (const auto& [x, y] : s.points) {
            if (first) {
                xlo = xhi = x;
                ylo = yhi = y;
                first = false;
            }
            xlo = std::min(xlo, x);
            xhi = std::max(xhi, x);
            ylo = std::min(ylo, y);
            yhi = std::max(yhi, y);
        }
    }
    Canvas canvas(width, height);
    Frame f{64, width - 16, 28, height - 40, pad_range(xlo, xhi), pad_range(ylo, yhi)};
    draw_axes(canvas, f, title, x_label, y_label);
    for (std::size_t si = 0; si < series.size(); ++si) {
        const Color c = kSeriesPalette[si % kPaletteSize];
        const auto& pts = series[si].points;
        for (std::size_t i = 1; i < pts.size(); ++i)
            canvas.line(f.px(pts[i - 1].first), f.py(pts[i - 1].second), f.px(pts[i].first),
                        f.py(pts[i].second), c.r, c.g, c.b);
        const int ly = f.top + 10 + 12 * static_cast<int>(si);
        canvas.fill_rect(f.left + 8, ly, 10, 7, c.r, c.g, c.b);
        canvas.text(f.left + 22, ly, series[si].name, 0, 0, 0);
    }
    save_ppm(path, canvas);
}

void bar_plot(const std::filesystem::path& path,
              const std::vector<std::pair<std::string, double>>& bars, const std::string& title,
              const std::string& y_label, int width, int height) {
    if (bars.empty()) throw InvalidArgument("bar plot needs at least one bar");
    double ylo = 0.0, yhi = 0.0;
    for (const auto& [label, v] : bars) {
        ylo = std::min(ylo, v);
        yhi = std::max(yhi, v);
    }
    Canvas canvas(width, height);
    Frame f{64, width - 16, 28, height - 56, pad_range(0.0, static_cast<double>(bars.size())),
            pad_range(ylo, yhi)};
    draw_axes(canvas, f, title, "", y_label);
    const int n = static_cast<int>(bars.size());
    for (int i = 0; i < n; ++i) {
        const Color c = kSeriesPalette[i % kPaletteSize];
        const int x0 = f.px(i + 0.15);
        const int x1 = f.px(i + 0.85);
        const int y0 = f.py(std::max(0.0, f.yr.lo));
        const int y1 = f.py(bars[i].second);
        canvas.fill_rect(std::min(x0, x1), std::min(y0, y1), std::abs(x1 - x0),
                         std::abs(y0 - y1) + 1, c.r, c.g, c.b);
        canvas.text(x0, f.bottom + 24, bars[i].first, 0, 0, 0);
        canvas.text(x0, y1 - 10, fmt_tick(bars[i].second), 0, 0, 0);
    }
    save_ppm(path, canvas);
}

} // namespace univla
