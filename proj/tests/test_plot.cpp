#include "univla/plot.hpp"

#include "univla/common.hpp"
#include "univla/sim_env.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <tuple>

using namespace univla;

namespace {

namespace fs = std::filesystem;

fs::path tmp_dir() {
    const fs::path dir = fs::temp_directory_path() / "univla_test_plot";
    fs::create_directories(dir);
    return dir;
}

struct Ppm {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;

    std::tuple<int, int, int> at(int x, int y) const {
        const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
        return {rgb[i], rgb[i + 1], rgb[i + 2]};
    }
    int count(std::uint8_t r, std::uint8_t g, std::uint8_t b) const {
        int n = 0;
        for (std::size_t i = 0; i < rgb.size(); i += 3)
            if (rgb[i] == r && rgb[i + 1] == g && rgb[i + 2] == b) ++n;
        return n;
    }
};

Ppm load_ppm(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    std::string magic;
    int maxval = 0;
    Ppm out;
    is >> magic >> out.width >> out.height >> maxval;
    REQUIRE(magic == "P6");
    REQUIRE(maxval == 255);
    is.get(); // single whitespace byte before the raster
    out.rgb.resize(static_cast<std::size_t>(out.width) * out.height * 3);
    is.read(reinterpret_cast<char*>(out.rgb.data()), static_cast<std::streamsize>(out.rgb.size()));
    REQUIRE(is.gcount() == static_cast<std::streamsize>(out.rgb.size()));
    return out;
}

std::string file_bytes(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

} // namespace

TEST_SUITE_BEGIN("plot");

TEST_CASE("canvas starts as a solid background") {
    const Canvas white(3, 2);
    CHECK(white.rgb.size() == 3u * 2u * 3u);
    for (std::uint8_t v : white.rgb) CHECK(v == 255);

    const Canvas tinted(2, 2, 10, 20, 30);
    CHECK(tinted.rgb[0] == 10);
    CHECK(tinted.rgb[1] == 20);
    CHECK(tinted.rgb[2] == 30);
}

TEST_CASE("set writes one pixel and ignores out-of-bounds coordinates") {
    Canvas c(4, 3);
    c.set(2, 1, 1, 2, 3);
    const std::size_t i = (1 * 4 + 2) * 3;
    CHECK(c.rgb[i] == 1);
    CHECK(c.rgb[i + 1] == 2);
    CHECK(c.rgb[i + 2] == 3);

    const std::vector<std::uint8_t> before = c.rgb;
    c.set(-1, 0, 9, 9, 9);
    c.set(0, -1, 9, 9, 9);
    c.set(4, 0, 9, 9, 9);
    c.set(0, 3, 9, 9, 9);
    CHECK(c.rgb == before);
}

TEST_CASE("fill_rect paints the region and clips at the edges") {
    Canvas c(5, 5);
    c.fill_rect(3, 3, 4, 4, 7, 7, 7);
    int painted = 0;
    for (std::size_t i = 0; i < c.rgb.size(); i += 3)
        if (c.rgb[i] == 7) ++painted;
    CHECK(painted == 4); // only the in-bounds 2x2 corner
}

TEST_CASE("line covers both endpoints") {
    Canvas c(10, 10);
    c.line(1, 2, 7, 2, 0, 0, 0);
    for (int x = 1; x <= 7; ++x) CHECK(std::get<0>(Ppm{10, 10, c.rgb}.at(x, 2)) == 0);
    CHECK(std::get<0>(Ppm{10, 10, c.rgb}.at(8, 2)) == 255);

    Canvas d(10, 10);
    d.line(8, 9, 2, 3, 5, 5, 5);
    CHECK(std::get<0>(Ppm{10, 10, d.rgb}.at(8, 9)) == 5);
    CHECK(std::get<0>(Ppm{10, 10, d.rgb}.at(2, 3)) == 5);
}

TEST_CASE("text renders known glyphs and skips unknown ones") {
    Canvas c(40, 12);
    c.text(0, 0, "T", 0, 0, 0);
    // the crossbar of T spans the full 5-pixel glyph width
    for (int x = 0; x < 5; ++x) CHECK(std::get<0>(Ppm{40, 12, c.rgb}.at(x, 0)) == 0);
    CHECK(std::get<0>(Ppm{40, 12, c.rgb}.at(0, 1)) == 255);

    Canvas lower(40, 12), upper(40, 12);
    lower.text(0, 0, "ab", 0, 0, 0);
    upper.text(0, 0, "AB", 0, 0, 0);
    CHECK(lower.rgb == upper.rgb);

    Canvas unknown(40, 12);
    unknown.text(0, 0, "@", 0, 0, 0);
    CHECK(Ppm{40, 12, unknown.rgb}.count(0, 0, 0) == 0); // blank, but still advances
    Canvas shifted(40, 12), spaced(40, 12);
    shifted.text(0, 0, "@I", 0, 0, 0);
    spaced.text(0, 0, " I", 0, 0, 0);
    CHECK(shifted.rgb == spaced.rgb);

    Canvas big(40, 20);
    big.text(0, 0, "T", 0, 0, 0, 2);
    CHECK(std::get<0>(Ppm{40, 20, big.rgb}.at(9, 1)) == 0); // crossbar doubled to 10x2
}

TEST_CASE("ppm files round trip the raster exactly") {
    const fs::path path = tmp_dir() / "tiny.ppm";
    Canvas c(2, 2, 0, 0, 0);
    c.set(0, 0, 1, 2, 3);
    c.set(1, 1, 250, 251, 252);
    save_ppm(path, c);

    const std::string expect = std::string("P6\n2 2\n255\n") +
                               std::string("\x01\x02\x03\x00\x00\x00"
                                           "\x00\x00\x00\xfa\xfb\xfc",
                                           12);
    CHECK(file_bytes(path) == expect);

    const Ppm back = load_ppm(path);
    CHECK(back.width == 2);
    CHECK(back.height == 2);
    CHECK(back.rgb == c.rgb);

    CHECK_THROWS_AS(save_ppm(tmp_dir() / "no_such_dir" / "x.ppm", c), IoError);
}

TEST_CASE("a rendered scene survives the image writer byte for byte") {
    const auto [state, instruction] = reset(TaskSpec{TaskKind::pick_place}, 5);
    const Image frame = render(state);
    const fs::path path = tmp_dir() / "frame.ppm";
    save_image_ppm(path, frame);

    const Ppm back = load_ppm(path);
    CHECK(back.width == frame.width);
    CHECK(back.height == frame.height);
    CHECK(back.rgb == image_to_bytes(frame));
}

TEST_CASE("line charts draw axes, every series, and a legend") {
    const fs::path path = tmp_dir() / "lines.ppm";
    std::vector<Series> series(2);
    series[0].name = "fast";
    series[1].name = "slow";
    for (int i = 0; i <= 20; ++i) {
        series[0].points.push_back({i, 1.0 / (i + 1)});
        series[1].points.push_back({i, 2.0 / (i + 1)});
    }
    line_plot(path, series, "loss", "step", "value");

    const Ppm img = load_ppm(path);
    CHECK(img.width == 720);
    CHECK(img.height == 480);
    CHECK(std::get<0>(img.at(64, 440)) == 0); // axis corner
    CHECK(img.count(204, 37, 41) > 50);       // first series + its swatch
    CHECK(img.count(57, 106, 177) > 50);      // second series + its swatch
    CHECK(img.count(0, 0, 0) > 500);          // axes, ticks, labels

    const std::string once = file_bytes(path);
    line_plot(path, series, "loss", "step", "value");
    CHECK(file_bytes(path) == once);

    CHECK_THROWS_AS(line_plot(path, {}, "t", "x", "y"), InvalidArgument);
    CHECK_THROWS_AS(line_plot(path, {Series{"empty", {}}}, "t", "x", "y"), InvalidArgument);
}

TEST_CASE("bar charts scale bars with their values") {
    const fs::path path = tmp_dir() / "bars.ppm";
    bar_plot(path, {{"a", 1.0}, {"b", 3.0}}, "scores", "rate");

    const Ppm img = load_ppm(path);
    const int first = img.count(204, 37, 41);
    const int second = img.count(57, 106, 177);
    CHECK(first > 100);
    CHECK(second > 100);
    CHECK(second > 2 * first); // three times the value, taller bar

    CHECK_THROWS_AS(bar_plot(path, {}, "t", "y"), InvalidArgument);
    fs::remove_all(tmp_dir());
}

TEST_SUITE_END();
