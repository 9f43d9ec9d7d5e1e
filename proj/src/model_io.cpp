#include "tigm/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tigm {

namespace {

constexpr std::string_view kMagic = "TIGM-MODEL";

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u64(std::uint64_t v) {
        for (int k = 0; k < 8; ++k) out_.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
    }
    void i32(std::int32_t v) {
        const auto u = static_cast<std::uint32_t>(v);
        for (int k = 0; k < 4; ++k) out_.push_back(static_cast<char>((u >> (8 * k)) & 0xff));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void size(std::size_t v) { u64(static_cast<std::uint64_t>(v)); }
    void doubles(std::span<const double> v) {
        size(v.size());
        for (double x : v) f64(x);
    }
    void images(const std::vector<Image>& v) {
        size(v.size());
        for (const auto& img : v) doubles(img);
    }
    void matrix(const Eigen::MatrixXd& m) {
        size(static_cast<std::size_t>(m.rows()));
        size(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i) f64(m(i, j));
    }
    void params(const TransformParams& p) {
        f64(p.shear);
        i32(p.dv);
        i32(p.dh);
    }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    Reader(std::string_view bytes) : b_(bytes) {}
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(b_[pos_++]);
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(b_[pos_ + k])) << (8 * k);
        pos_ += 8;
        return v;
    }
    std::int32_t i32() {
        need(4);
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(b_[pos_ + k])) << (8 * k);
        pos_ += 4;
        return static_cast<std::int32_t>(v);
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::size_t size(std::size_t limit) {
        const std::uint64_t v = u64();
        if (v > limit) throw FormatError("model file: block length " + std::to_string(v) + " exceeds " + std::to_string(limit));
        return static_cast<std::size_t>(v);
    }
    std::vector<double> doubles(std::size_t expect) {
        const std::size_t k = size(remaining() / 8);
        if (k != expect) throw FormatError("model file: expected " + std::to_string(expect) + " values, found " + std::to_string(k));
        std::vector<double> v(k);
        for (double& x : v) x = f64();
        return v;
    }
    std::vector<Image> images(std::size_t count, std::size_t n) {
        if (size(remaining()) != count) throw FormatError("model file: image count mismatch");
        std::vector<Image> v;
        for (std::size_t c = 0; c < count; ++c) v.push_back(doubles(n));
        return v;
    }
    Eigen::MatrixXd matrix(std::size_t rows, std::size_t cols) {
        const std::size_t r = size(remaining()), c = size(remaining());
        if (r != rows || c != cols) throw FormatError("model file: matrix shape mismatch");
        Eigen::MatrixXd m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = f64();
        return m;
    }
    TransformParams params() {
        TransformParams p;
        p.shear = f64();
        p.dv = i32();
        p.dh = i32();
        return p;
    }
    std::size_t remaining() const { return b_.size() - pos_; }

private:
    void need(std::size_t k) const {
        if (remaining() < k) throw FormatError("model file: unexpected end of payload");
    }
    std::string_view b_;
    std::size_t pos_ = 0;
};

void write_transforms(Writer& w, const TransformationSet& ts) {
    w.size(ts.size());
    w.u8(ts.boundary() == Boundary::Wrap ? 0 : 1);
    w.u8(ts.grid() ? 1 : 0);
    w.size(ts.grid() ? ts.grid()->vertical : 0);
    w.size(ts.grid() ? ts.grid()->horizontal : 0);
    for (const auto& op : ts.ops()) {
        w.params(op.params());
        for (auto s : op.source()) w.i32(s);
    }
}

TransformationSet read_transforms(Reader& r, ImageShape shape) {
    const std::size_t n = shape.n();
    const std::size_t count = r.size(r.remaining() / (16 + 4 * std::max<std::size_t>(n, 1)));
    const std::uint8_t b = r.u8();
    if (b > 1) throw FormatError("model file: bad boundary code");
    const bool has_grid = r.u8() != 0;
    const std::size_t gv = r.size(count), gh = r.size(count);
    std::vector<TransformOp> ops;
    for (std::size_t l = 0; l < count; ++l) {
        const TransformParams p = r.params();
        std::vector<std::int32_t> src(n);
        for (auto& s : src) s = r.i32();
        try {
            ops.emplace_back(shape, std::move(src), p);
        } catch (const ContractViolation& e) {
            throw FormatError(std::string("model file: invalid transformation: ") + e.what());
        }
    }
    std::optional<ShiftGrid> grid;
    if (has_grid) grid = ShiftGrid{gv, gh};
    try {
        return TransformationSet(shape, std::move(ops), b == 0 ? Boundary::Wrap : Boundary::ZeroPad, grid);
    } catch (const ContractViolation& e) {
        throw FormatError(std::string("model file: invalid transformation set: ") + e.what());
    }
}

void write_frozen(Writer& w, const std::vector<FrozenColumn>& frozen) {
    w.size(frozen.size());
    for (const auto& f : frozen) {
        w.size(f.column);
        w.params(f.direction);
    }
}

std::vector<FrozenColumn> read_frozen(Reader& r) {
    std::vector<FrozenColumn> out(r.size(r.remaining() / 24));
    for (auto& f : out) {
        f.column = r.size(1u << 20);
        f.direction = r.params();
    }
    return out;
}

std::string header(Family family, ImageShape shape, std::size_t transforms, std::size_t payload) {
    std::ostringstream h;
    h << kMagic << '\n'
      << "version " << kModelFormatVersion << '\n'
      << "family " << to_string(family) << '\n'
      << "shape " << shape.height << ' ' << shape.width << '\n'
      << "transforms " << transforms << '\n'
      << "payload " << payload << '\n'
      << "end\n";
    return h.str();
}

ImageShape shape_of(const AnyModel& m) {
    return std::visit([](const auto& x) { return x.shape; }, m);
}

const TransformationSet& transforms_of(const AnyModel& m) {
    return std::visit([](const auto& x) -> const TransformationSet& { return x.transforms; }, m);
}

std::string payload(const TmgModel& m) {
    Writer w;
    write_transforms(w, m.transforms);
    w.size(m.clusters);
    w.f64(m.variance_floor);
    w.doubles(m.pi);
    w.images(m.mu);
    w.images(m.phi);
    w.doubles(m.rho);
    w.doubles(m.psi);
    return w.take();
}

std::string payload(const TcaModel& m) {
    Writer w;
    write_transforms(w, m.transforms);
    w.size(m.factors());
    w.u8(m.fast_likelihood);
    w.f64(m.variance_floor);
    w.doubles(m.mu);
    w.matrix(m.lambda);
    w.doubles(m.phi);
    w.doubles(m.rho);
    w.doubles(m.psi);
    write_frozen(w, m.frozen);
    return w.take();
}

std::string payload(const MtcaModel& m) {
    Writer w;
    write_transforms(w, m.transforms);
    w.size(m.clusters);
    w.size(m.factors());
    w.u8(m.fast_likelihood);
    w.f64(m.variance_floor);
    w.doubles(m.pi);
    w.images(m.mu);
    w.size(m.lambda.size());
    for (const auto& l : m.lambda) w.matrix(l);
    w.images(m.phi);
    w.doubles(m.rho);
    w.doubles(m.psi);
    write_frozen(w, m.frozen);
    return w.take();
}

std::string payload(const ThmmModel& m) {
    Writer w;
    write_transforms(w, m.transforms);
    w.size(m.classes);
    w.f64(m.variance_floor);
    w.u8(m.joint_initial);
    w.u8(m.motion.mode == MotionMode::Vector ? 0 : 1);
    w.i32(m.motion.threshold);
    w.u8(m.motion.per_class);
    w.images(m.mu);
    w.images(m.phi);
    w.doubles(m.psi);
    w.doubles(m.initial);
    w.doubles(m.class_trans);
    w.doubles(m.motion.table);
    return w.take();
}

template <class M>
M checked(M m) {
    try {
        m.validate();
    } catch (const ContractViolation& e) {
        throw FormatError(std::string("model file: inconsistent parameters: ") + e.what());
    }
    return m;
}

AnyModel read_payload(Family family, ImageShape shape, Reader& r) {
    const std::size_t n = shape.n();
    const std::size_t cap = r.remaining();
    TransformationSet ts = read_transforms(r, shape);
    const std::size_t L = ts.size();
    switch (family) {
        case Family::Tmg: {
            TmgModel m;
            m.shape = shape;
            m.transforms = std::move(ts);
            m.clusters = r.size(cap);
            m.variance_floor = r.f64();
            m.pi = r.doubles(m.clusters);
            m.mu = r.images(m.clusters, n);
            m.phi = r.images(m.clusters, n);
            m.rho = r.doubles(m.clusters * L);
            m.psi = r.doubles(n);
            return checked(std::move(m));
        }
        case Family::Tca: {
            TcaModel m;
            m.shape = shape;
            m.transforms = std::move(ts);
            const std::size_t K = r.size(cap);
            m.fast_likelihood = r.u8() != 0;
            m.variance_floor = r.f64();
            m.mu = r.doubles(n);
            m.lambda = r.matrix(n, K);
            m.phi = r.doubles(n);
            m.rho = r.doubles(L);
            m.psi = r.doubles(n);
            m.frozen = read_frozen(r);
            return checked(std::move(m));
        }
        case Family::Mtca: {
            MtcaModel m;
            m.shape = shape;
            m.transforms = std::move(ts);
            m.clusters = r.size(cap);
            const std::size_t K = r.size(cap);
            m.fast_likelihood = r.u8() != 0;
            m.variance_floor = r.f64();
            m.pi = r.doubles(m.clusters);
            m.mu = r.images(m.clusters, n);
            if (r.size(cap) != m.clusters) throw FormatError("model file: loading count mismatch");
            for (std::size_t c = 0; c < m.clusters; ++c) m.lambda.push_back(r.matrix(n, K));
            m.phi = r.images(m.clusters, n);
            m.rho = r.doubles(m.clusters * L);
            m.psi = r.doubles(n);
            m.frozen = read_frozen(r);
            return checked(std::move(m));
        }
        case Family::Thmm: {
            ThmmModel m;
            m.shape = shape;
            m.transforms = std::move(ts);
            m.classes = r.size(cap);
            m.variance_floor = r.f64();
            m.joint_initial = r.u8() != 0;
            const std::uint8_t mode = r.u8();
            if (mode > 1) throw FormatError("model file: bad motion mode");
            m.motion.mode = mode == 0 ? MotionMode::Vector : MotionMode::Magnitude;
            m.motion.threshold = r.i32();
            m.motion.per_class = r.u8() != 0;
            m.mu = r.images(m.classes, n);
            m.phi = r.images(m.classes, n);
            m.psi = r.doubles(n);
            m.initial = r.doubles(m.classes * L);
            m.class_trans = r.doubles(m.classes * m.classes);
            const std::size_t B = r.size(cap);
            m.motion.table.resize(B);
            for (double& v : m.motion.table) v = r.f64();
            return checked(std::move(m));
        }
    }
    throw UnknownFamilyError("model file: unknown family");
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ModelIoError("cannot open model file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : bytes) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

const char* to_string(Family family) {
    switch (family) {
        case Family::Tmg: return "tmg";
        case Family::Tca: return "tca";
        case Family::Mtca: return "mtca";
        case Family::Thmm: return "thmm";
    }
    return "?";
}

Family family_from_string(const std::string& text) {
    if (text == "tmg") return Family::Tmg;
    if (text == "tca") return Family::Tca;
    if (text == "mtca") return Family::Mtca;
    if (text == "thmm") return Family::Thmm;
    throw UnknownFamilyError("unknown model family '" + text + "'");
}

Family family_of(const AnyModel& model) { return static_cast<Family>(model.index()); }

std::string serialize_model(const AnyModel& model) {
    std::visit([](const auto& m) { m.validate(); }, model);
    const std::string body = std::visit([](const auto& m) { return payload(m); }, model);
    std::string out = header(family_of(model), shape_of(model), transforms_of(model).size(), body.size()) + body;
    Writer w;
    w.u64(fnv1a64(out));
    return out + w.take();
}

AnyModel deserialize_model(const std::string& bytes) {
    if (bytes.size() < 8) throw ChecksumError("model file too short to hold a checksum");
    const std::string_view content(bytes.data(), bytes.size() - 8);
    Reader tail(std::string_view(bytes).substr(bytes.size() - 8));
    if (tail.u64() != fnv1a64(content)) throw ChecksumError("model file checksum mismatch (corrupt or truncated)");

    std::istringstream head{std::string(content)};
    std::string line, key;
    if (!std::getline(head, line) || line != kMagic) throw FormatError("model file: missing magic line");
    int version = 0;
    std::string family_text;
    ImageShape shape{};
    std::size_t transforms = 0, payload_size = 0;
    bool done = false;
    while (!done && std::getline(head, line)) {
        std::istringstream ls(line);
        ls >> key;
        if (key == "version") ls >> version;
        else if (key == "family") ls >> family_text;
        else if (key == "shape") ls >> shape.height >> shape.width;
        else if (key == "transforms") ls >> transforms;
        else if (key == "payload") ls >> payload_size;
        else if (key == "end") done = true;
        else throw FormatError("model file: unknown header key '" + key + "'");
        if (ls.fail()) throw FormatError("model file: malformed header line '" + line + "'");
    }
    if (!done) throw FormatError("model file: header not terminated");
    if (version != kModelFormatVersion)
        throw VersionError("model file version " + std::to_string(version) + " (this build reads " +
                           std::to_string(kModelFormatVersion) + ")");
    const Family family = family_from_string(family_text);
    const auto offset = static_cast<std::size_t>(head.tellg());
    if (offset + payload_size != content.size()) throw FormatError("model file: payload length mismatch");
    if (shape.n() == 0) throw FormatError("model file: empty shape");
    Reader r(content.substr(offset));
    AnyModel m = read_payload(family, shape, r);
    if (r.remaining() != 0) throw FormatError("model file: trailing bytes after parameter blocks");
    if (transforms_of(m).size() != transforms) throw FormatError("model file: transformation count mismatch");
    return m;
}

void save_model(const AnyModel& model, const std::filesystem::path& path) {
    const std::string bytes = serialize_model(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ModelIoError("cannot write model file " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ModelIoError("write failed for " + path.string());
}

AnyModel load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

namespace {
template <class M>
M load_as(const std::filesystem::path& path, Family want) {
    AnyModel m = load_model(path);
    if (family_of(m) != want)
        throw FamilyMismatchError(path.string() + " holds a " + to_string(family_of(m)) + " model, expected " +
                                  to_string(want));
    return std::get<M>(std::move(m));
}
}  // namespace

TmgModel load_tmg(const std::filesystem::path& path) { return load_as<TmgModel>(path, Family::Tmg); }
TcaModel load_tca(const std::filesystem::path& path) { return load_as<TcaModel>(path, Family::Tca); }
MtcaModel load_mtca(const std::filesystem::path& path) { return load_as<MtcaModel>(path, Family::Mtca); }
ThmmModel load_thmm(const std::filesystem::path& path) { return load_as<ThmmModel>(path, Family::Thmm); }

}  // namespace tigm
