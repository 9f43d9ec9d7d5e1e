#include "tigm/media_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace tigm {

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MediaError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw MediaError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw MediaError("write failed for " + path.string());
}

// Header token: skips whitespace and '#' comments.
std::size_t pgm_token(const std::string& b, std::size_t& pos, const fs::path& path) {
    for (;;) {
        while (pos < b.size() && std::isspace(static_cast<unsigned char>(b[pos]))) ++pos;
        if (pos < b.size() && b[pos] == '#') {
            while (pos < b.size() && b[pos] != '\n') ++pos;
            continue;
        }
        break;
    }
    const std::size_t start = pos;
    while (pos < b.size() && std::isdigit(static_cast<unsigned char>(b[pos]))) ++pos;
    if (start == pos || pos - start > 9) throw MediaError(path.string() + ": malformed PGM header");
    return std::stoul(b.substr(start, pos - start));
}

}  // namespace

void write_pgm(const fs::path& path, const Image& image, ImageShape shape, int bits) {
    require(bits == 8 || bits == 16, "write_pgm: bits must be 8 or 16");
    require_length(image, shape, "write_pgm image");
    const unsigned maxval = bits == 8 ? 255u : 65535u;
    std::string out = "P5\n" + std::to_string(shape.width) + " " + std::to_string(shape.height) + "\n" +
                      std::to_string(maxval) + "\n";
    for (double v : image) {
        const double c = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
        const auto q = static_cast<unsigned>(std::lround(c * maxval));
        if (bits == 16) out.push_back(static_cast<char>(q >> 8));
        out.push_back(static_cast<char>(q & 0xff));
    }
    spit(path, out);
}

Frames read_pgm(const fs::path& path) {
    const std::string b = slurp(path);
    if (b.size() < 2 || b[0] != 'P' || b[1] != '5') throw MediaError(path.string() + ": not a binary PGM (P5)");
    std::size_t pos = 2;
    const std::size_t w = pgm_token(b, pos, path), h = pgm_token(b, pos, path), maxval = pgm_token(b, pos, path);
    if (w == 0 || h == 0) throw MediaError(path.string() + ": empty image");
    if (maxval == 0 || maxval > 65535) throw MediaError(path.string() + ": maxval out of range");
    if (pos >= b.size() || !std::isspace(static_cast<unsigned char>(b[pos])))
        throw MediaError(path.string() + ": malformed PGM header");
    ++pos;
    const std::size_t bytes = maxval < 256 ? 1 : 2;
    if (b.size() - pos != w * h * bytes)
        throw MediaError(path.string() + ": expected " + std::to_string(w * h * bytes) + " data bytes, found " +
                         std::to_string(b.size() - pos));
    Frames f;
    f.shape = {h, w};
    Image img(w * h);
    for (std::size_t i = 0; i < img.size(); ++i) {
        unsigned v = static_cast<unsigned char>(b[pos + i * bytes]);
        if (bytes == 2) v = (v << 8) | static_cast<unsigned char>(b[pos + i * bytes + 1]);
        if (v > maxval) throw MediaError(path.string() + ": sample exceeds maxval");
        img[i] = static_cast<double>(v) / static_cast<double>(maxval);
    }
    f.frames.push_back(std::move(img));
    return f;
}

void write_frames(const std::vector<Image>& frames, ImageShape shape, const fs::path& dir, int bits) {
    fs::create_directories(dir);
    char name[32];
    for (std::size_t t = 0; t < frames.size(); ++t) {
        std::snprintf(name, sizeof name, "frame_%06zu.pgm", t);
        write_pgm(dir / name, frames[t], shape, bits);
    }
}

Frames read_frames(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw MediaError(dir.string() + ": not a directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
    if (files.empty()) throw MediaError(dir.string() + ": no .pgm frames (empty sequence)");
    std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
        return a.filename().string() < b.filename().string();
    });
    Frames out;
    for (const auto& p : files) {
        Frames one = read_pgm(p);
        if (out.frames.empty()) out.shape = one.shape;
        else if (!(one.shape == out.shape))
            throw MediaError(p.string() + ": shape " + std::to_string(one.shape.height) + "x" +
                             std::to_string(one.shape.width) + " differs from the first frame");
        out.frames.push_back(std::move(one.frames[0]));
    }
    return out;
}

void write_montage(const fs::path& path, const std::vector<Image>& images, ImageShape shape, std::size_t columns) {
    require(!images.empty(), "write_montage: no images");
    const std::size_t k = images.size();
    if (columns == 0) columns = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(k))));
    const std::size_t rows = (k + columns - 1) / columns;
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& img : images) {
        require_length(img, shape, "write_montage image");
        for (double v : img) lo = std::min(lo, v), hi = std::max(hi, v);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    const ImageShape out_shape{rows * (shape.height + 1) + 1, columns * (shape.width + 1) + 1};
    Image out(out_shape.n(), 1.0);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t r0 = 1 + (i / columns) * (shape.height + 1), c0 = 1 + (i % columns) * (shape.width + 1);
        for (std::size_t r = 0; r < shape.height; ++r)
            for (std::size_t c = 0; c < shape.width; ++c)
                out[out_shape.index(r0 + r, c0 + c)] = (images[i][shape.index(r, c)] - lo) / span;
    }
    write_pgm(path, out, out_shape, 8);
}

// ---------------------------------------------------------------- CSV

std::size_t CsvTable::column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw MediaError("CSV has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
}

namespace {

std::string quote(const std::string& field) {
    if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
    std::string q = "\"";
    for (char c : field) {
        if (c == '"') q += '"';
        q += c;
    }
    return q + '"';
}

void put_row(std::string& out, const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) out += ',';
        out += quote(row[i]);
    }
    out += "\r\n";
}

}  // namespace

std::string to_csv(const CsvTable& table) {
    std::string out;
    put_row(out, table.header);
    for (const auto& r : table.rows) {
        if (r.size() != table.header.size()) throw MediaError("CSV row width differs from header");
        put_row(out, r);
    }
    return out;
}

CsvTable parse_csv(const std::string& text, const std::string& origin) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false, in_quotes = false, any = false;
    std::size_t line = 1;
    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
        quoted = false;
    };
    auto end_record = [&] {
        end_field();
        records.push_back(std::move(row));
        row.clear();
        any = false;
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') field += '"', ++i;
                else in_quotes = false;
            } else {
                if (c == '\n') ++line;
                field += c;
            }
            continue;
        }
        any = true;
        if (c == '"') {
            if (!field.empty() || quoted) throw MediaError(origin + ":" + std::to_string(line) + ": stray quote");
            in_quotes = quoted = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\r' || c == '\n') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            ++line;
            end_record();
        } else {
            if (quoted) throw MediaError(origin + ":" + std::to_string(line) + ": text after closing quote");
            field += c;
        }
    }
    if (in_quotes) throw MediaError(origin + ": unterminated quoted field");
    if (any) end_record();
    if (records.empty()) throw MediaError(origin + ": empty CSV");
    CsvTable t;
    t.header = std::move(records[0]);
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != t.header.size())
            throw MediaError(origin + ": record " + std::to_string(r + 1) + " has " + std::to_string(records[r].size()) +
                             " fields, header has " + std::to_string(t.header.size()));
        t.rows.push_back(std::move(records[r]));
    }
    return t;
}

void write_csv(const fs::path& path, const CsvTable& table) { spit(path, to_csv(table)); }

CsvTable read_csv(const fs::path& path) { return parse_csv(slurp(path), path.string()); }

}  // namespace tigm
