#include "tigm/harness.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "model_util.hpp"

namespace tigm {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- manifest

const std::vector<ManifestKey>& Manifest::keys() {
    static const std::vector<ManifestKey> table = {
        {"name", "experiment", "experiment name (informational)"},
        {"seed", "0", "seeds the generator and every restart"},
        {"output", "out", "output directory"},
        {"data.frames", "", "directory of PGM frames; empty: generate from gen.*"},
        {"gen.kind", "pacman", "pacman | glyphs | template | occluded"},
        {"gen.frames", "200", "pacman/template: sequence length"},
        {"gen.grid", "11", "pacman: frame side"},
        {"gen.p_stay", "0.2", "pacman: probability of not moving"},
        {"gen.p_turn", "0.75", "pacman: probability of a left turn"},
        {"gen.bg_noise", "0.1", "pacman: static background clutter sigma"},
        {"gen.sensor_noise", "0.05", "pacman/template: per-frame noise sigma"},
        {"gen.per_class", "200", "glyphs: samples per class"},
        {"gen.factors", "0.3,0.2,0.15", "glyphs: deformation factor scales"},
        {"gen.noise", "0.05", "glyphs: pixel noise sigma"},
        {"gen.glyph_transforms", "shear", "glyphs: shear | identity (zero padded)"},
        {"gen.height", "12", "template: frame height"},
        {"gen.width", "12", "template: frame width"},
        {"gen.shift_range", "3", "template: maximal shift per axis"},
        {"gen.random_walk", "true", "template: lazy random walk instead of iid shifts"},
        {"gen.boundary", "wrap", "template: wrap | zero"},
        {"gen.bar", "4,3,3,6", "occluded: top,left,height,width"},
        {"gen.bar_intensity", "0", "occluded: bar value"},
        {"model.family", "tmg", "tmg | tca | mtca | thmm"},
        {"model.classes", "1", "clusters / classes C"},
        {"model.factors", "0", "factors K (tca, mtca)"},
        {"transforms.kind", "translate", "translate | shear | identity"},
        {"transforms.shifts_v", "1", "translate: vertical grid size"},
        {"transforms.shifts_h", "1", "translate: horizontal grid size"},
        {"transforms.boundary", "wrap", "wrap | zero"},
        {"em.iterations", "30", "EM iterations per restart"},
        {"em.restarts", "1", "restarts; the highest final likelihood wins"},
        {"em.tolerance", "1e-7", "relative log-likelihood change that stops EM early (0: never)"},
        {"em.init_iterations", "20", "thmm: TMG iterations used for initialization"},
        {"em.freeze_rho", "false", "keep transformation priors fixed"},
        {"em.tie_psi", "false", "share one sensor variance across pixels"},
        {"em.refresh_tangents", "true", "re-derive frozen tangent columns each step"},
        {"em.clamp_motion", "false", "thmm: keep the motion table fixed"},
        {"em.fast_likelihood", "false", "tca/mtca: diagonal-core Woodbury likelihood"},
        {"em.deterministic", "true", "fixed-order reductions (bit-stable across thread counts)"},
        {"em.threads", "0", "worker threads (0: TIGM_THREADS or all cores)"},
        {"thmm.motion", "vector", "vector | magnitude"},
        {"thmm.threshold", "3", "largest motion magnitude with nonzero prior"},
        {"thmm.per_class", "false", "one motion table per previous class"},
        {"thmm.joint_initial", "false", "learn the initial state distribution jointly"},
        {"thmm.self_transition", "0.5", "initial class self-transition probability"},
        {"thmm.align_templates", "true", "register templates to each other at initialization"},
    };
    return table;
}

namespace {

const ManifestKey* find_key(const std::string& name) {
    for (const auto& k : Manifest::keys())
        if (k.name == name) return &k;
    return nullptr;
}

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ManifestError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw MediaError("cannot write " + path.string());
    out << text;
}

}  // namespace

Manifest Manifest::parse(const std::string& text, const std::string& origin) {
    Manifest m;
    std::istringstream in(text);
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = origin + ":" + std::to_string(number);
        if (eq == std::string::npos) throw ManifestError(where + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (m.has(key)) throw ManifestError(where + ": duplicate key '" + key + "'");
        try {
            m.set(key, trim(line.substr(eq + 1)));
        } catch (const ManifestError& e) {
            throw ManifestError(where + ": " + e.what());
        }
    }
    return m;
}

Manifest Manifest::load(const fs::path& path) { return parse(slurp(path), path.string()); }

void Manifest::set(const std::string& key, const std::string& value) {
    if (!find_key(key)) throw ManifestError("unknown manifest key '" + key + "'");
    values_[key] = value;
}

std::string Manifest::get(const std::string& key) const {
    const auto* k = find_key(key);
    if (!k) throw ManifestError("unknown manifest key '" + key + "'");
    const auto it = values_.find(key);
    return it == values_.end() ? k->default_value : it->second;
}

std::uint64_t Manifest::get_u64(const std::string& key) const {
    const std::string v = get(key);
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size())
        throw ManifestError(key + ": expected a non-negative integer, got '" + v + "'");
    return out;
}

std::size_t Manifest::get_size(const std::string& key) const { return static_cast<std::size_t>(get_u64(key)); }

double Manifest::get_double(const std::string& key) const {
    const std::string v = get(key);
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used == v.size() && std::isfinite(d)) return d;
    } catch (const std::exception&) {
    }
    throw ManifestError(key + ": expected a number, got '" + v + "'");
}

bool Manifest::get_bool(const std::string& key) const {
    std::string v = get(key);
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ManifestError(key + ": expected true or false, got '" + get(key) + "'");
}

std::vector<double> Manifest::get_doubles(const std::string& key) const {
    std::vector<double> out;
    const std::string v = get(key);
    std::size_t start = 0;
    while (start <= v.size()) {
        const auto comma = v.find(',', start);
        const std::string item = trim(v.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
        if (!item.empty()) {
            try {
                std::size_t used = 0;
                out.push_back(std::stod(item, &used));
                if (used != item.size()) throw std::invalid_argument(item);
            } catch (const std::exception&) {
                throw ManifestError(key + ": expected comma-separated numbers, got '" + v + "'");
            }
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string Manifest::to_text() const {
    std::string out;
    for (const auto& k : keys()) out += k.name + " = " + get(k.name) + "\n";
    return out;
}

// ---------------------------------------------------------------- manifest -> objects

namespace {

Boundary boundary_value(const Manifest& m, const std::string& key) {
    try {
        return boundary_from_string(m.get(key));
    } catch (const std::exception& e) {
        throw ManifestError(key + ": " + e.what());
    }
}

Image random_texture(ImageShape shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image t(shape.n());
    for (double& v : t) v = u(rng);
    return t;
}

}  // namespace

Dataset manifest_data(const Manifest& m) {
    if (!m.get("data.frames").empty()) {
        const Frames f = read_frames(m.get("data.frames"));
        return Dataset{f.shape, f.frames, {}};
    }
    const std::uint64_t seed = m.get_u64("seed");
    const std::string kind = m.get("gen.kind");
    if (kind == "pacman") {
        PacmanParams p;
        p.frames = m.get_size("gen.frames");
        p.grid = m.get_size("gen.grid");
        p.p_stay = m.get_double("gen.p_stay");
        p.p_turn = m.get_double("gen.p_turn");
        p.bg_noise = m.get_double("gen.bg_noise");
        p.sensor_noise = m.get_double("gen.sensor_noise");
        return gen_pacman(seed, p);
    }
    if (kind == "glyphs") {
        GlyphParams p;
        p.per_class = m.get_size("gen.per_class");
        p.factors = m.get_doubles("gen.factors");
        p.noise = m.get_double("gen.noise");
        const auto ts = build_transforms({m.get("gen.glyph_transforms"), 1, 1, Boundary::ZeroPad}, kGlyphShape);
        return gen_sheared_glyphs(seed, default_glyphs(), ts, p);
    }
    if (kind == "template" || kind == "occluded") {
        const ImageShape shape{m.get_size("gen.height"), m.get_size("gen.width")};
        ShiftedTemplateParams p;
        p.frames = m.get_size("gen.frames");
        p.shift_range = static_cast<int>(m.get_size("gen.shift_range"));
        p.sensor_noise = m.get_double("gen.sensor_noise");
        p.random_walk = m.get_bool("gen.random_walk");
        p.boundary = boundary_value(m, "gen.boundary");
        Dataset base = gen_shifted_template(seed, random_texture(shape, detail::mix_seed(seed, 0x7e47)), shape, p);
        if (kind == "template") return base;
        const auto bar = m.get_doubles("gen.bar");
        if (bar.size() != 4) throw ManifestError("gen.bar: expected top,left,height,width");
        for (double v : bar)
            if (v < 0.0 || v != std::floor(v)) throw ManifestError("gen.bar: expected non-negative integers");
        return gen_occluded(base, Bar{static_cast<std::size_t>(bar[0]), static_cast<std::size_t>(bar[1]),
                                      static_cast<std::size_t>(bar[2]), static_cast<std::size_t>(bar[3]),
                                      m.get_double("gen.bar_intensity")});
    }
    throw ManifestError("gen.kind: unknown generator '" + kind + "' (pacman, glyphs, template, occluded)");
}

ParallelConfig manifest_parallel(const Manifest& m) {
    ParallelConfig p;
    p.deterministic = m.get_bool("em.deterministic");
    p.threads = m.get_size("em.threads");
    return p;
}

TrainSettings manifest_settings(const Manifest& m) {
    TrainSettings s;
    try {
        s.family = family_from_string(m.get("model.family"));
    } catch (const std::exception& e) {
        throw ManifestError(std::string("model.family: ") + e.what());
    }
    s.classes = m.get_size("model.classes");
    s.factors = m.get_size("model.factors");
    s.transforms = {m.get("transforms.kind"), m.get_size("transforms.shifts_v"), m.get_size("transforms.shifts_h"),
                    boundary_value(m, "transforms.boundary")};
    s.em.freeze_rho = m.get_bool("em.freeze_rho");
    s.em.tie_psi = m.get_bool("em.tie_psi");
    s.em.refresh_tangents = m.get_bool("em.refresh_tangents");
    s.em.parallel = manifest_parallel(m);
    s.schedule.max_iterations = m.get_size("em.iterations");
    s.schedule.tolerance = m.get_double("em.tolerance");
    s.restarts = m.get_size("em.restarts");
    s.seed = m.get_u64("seed");
    s.fast_likelihood = m.get_bool("em.fast_likelihood");
    s.init_iterations = m.get_size("em.init_iterations");
    s.clamp_motion = m.get_bool("em.clamp_motion");
    try {
        s.motion.mode = motion_mode_from_string(m.get("thmm.motion"));
    } catch (const std::exception& e) {
        throw ManifestError(std::string("thmm.motion: ") + e.what());
    }
    s.motion.threshold = static_cast<int>(m.get_size("thmm.threshold"));
    s.motion.per_class = m.get_bool("thmm.per_class");
    s.joint_initial = m.get_bool("thmm.joint_initial");
    s.self_transition = m.get_double("thmm.self_transition");
    s.align_templates = m.get_bool("thmm.align_templates");
    return s;
}

// ---------------------------------------------------------------- train

namespace {

struct ImageGroups {
    std::vector<Image> means, variances, factors;
    Image noise;
};

std::vector<Image> columns_of(const Eigen::MatrixXd& lambda) {
    std::vector<Image> out;
    for (Eigen::Index k = 0; k < lambda.cols(); ++k) {
        Image col(static_cast<std::size_t>(lambda.rows()));
        for (Eigen::Index p = 0; p < lambda.rows(); ++p) col[static_cast<std::size_t>(p)] = lambda(p, k);
        out.push_back(std::move(col));
    }
    return out;
}

ImageGroups image_groups(const AnyModel& model) {
    ImageGroups g;
    if (const auto* m = std::get_if<TmgModel>(&model)) {
        g = {m->mu, m->phi, {}, m->psi};
    } else if (const auto* m = std::get_if<TcaModel>(&model)) {
        g = {{m->mu}, {m->phi}, columns_of(m->lambda), m->psi};
    } else if (const auto* m = std::get_if<MtcaModel>(&model)) {
        g = {m->mu, m->phi, {}, m->psi};
        for (const auto& l : m->lambda)
            for (auto& col : columns_of(l)) g.factors.push_back(std::move(col));
    } else {
        const auto& t = std::get<ThmmModel>(model);
        g = {t.mu, t.phi, {}, t.psi};
    }
    return g;
}

ImageShape shape_of(const AnyModel& model) {
    return std::visit([](const auto& m) { return m.shape; }, model);
}

std::string join(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + fmt(v[i]);
    return s;
}

std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + std::to_string(v[i]);
    return s;
}

}  // namespace

TrainArtifacts cmd_train(const Manifest& manifest, std::ostream* log) {
    const TrainSettings settings = manifest_settings(manifest);
    const Dataset data = manifest_data(manifest);
    const fs::path out = manifest.get("output");
    fs::create_directories(out);

    CsvTable steps{{"restart", "iteration", "loglik", "cluster_mass", "rescued"}, {}};
    const std::vector<Sequence> sequences{data.frames};
    TrainArtifacts art;
    art.outcome = train_model(settings, data.shape, sequences, [&](std::size_t restart, const StepReport& r) {
        steps.rows.push_back({std::to_string(restart), std::to_string(r.iteration), fmt(r.loglik),
                              join(r.cluster_mass), join(r.rescued)});
        if (log) *log << "restart " << restart << " " << r.to_line() << "\n";
    });
    if (log) {
        *log << "best restart " << art.outcome.best_restart << " loglik " << fmt(art.outcome.loglik) << "\n";
    }

    art.model_file = out / "model.tigm";
    save_model(art.outcome.model, art.model_file);
    art.files.push_back(art.model_file);
    write_csv(out / "steps.csv", steps);
    art.files.push_back(out / "steps.csv");

    const ImageShape shape = shape_of(art.outcome.model);
    const ImageGroups g = image_groups(art.outcome.model);
    write_montage(out / "means.pgm", g.means, shape);
    write_montage(out / "variances.pgm", g.variances, shape);
    art.files.push_back(out / "means.pgm");
    art.files.push_back(out / "variances.pgm");
    if (!g.factors.empty()) {
        write_montage(out / "factors.pgm", g.factors, shape);
        art.files.push_back(out / "factors.pgm");
    }
    write_montage(out / "noise.pgm", {g.noise}, shape);
    art.files.push_back(out / "noise.pgm");
    write_text(out / "manifest.txt", manifest.to_text());
    art.files.push_back(out / "manifest.txt");
    return art;
}

// ---------------------------------------------------------------- gen

std::vector<fs::path> cmd_gen(const Manifest& manifest) {
    if (!manifest.get("data.frames").empty()) throw ManifestError("gen: data.frames must be empty");
    const Dataset d = manifest_data(manifest);
    const fs::path out = manifest.get("output");
    fs::create_directories(out);
    write_frames(d.frames, d.shape, out / "frames", 16);

    CsvTable truth;
    truth.header = {"frame"};
    const auto& t = d.truth;
    const bool has_class = !t.classes.empty(), has_shift = !t.shifts.empty(), has_op = !t.ops.empty();
    if (has_class) truth.header.push_back("class");
    if (has_shift) truth.header.insert(truth.header.end(), {"dv", "dh"});
    if (has_op) truth.header.push_back("op");
    for (std::size_t i = 0; i < d.frames.size(); ++i) {
        std::vector<std::string> row{std::to_string(i)};
        if (has_class) row.push_back(std::to_string(t.classes[i]));
        if (has_shift) row.insert(row.end(), {std::to_string(t.shifts[i].first), std::to_string(t.shifts[i].second)});
        if (has_op) row.push_back(std::to_string(t.ops[i]));
        truth.rows.push_back(std::move(row));
    }
    write_csv(out / "truth.csv", truth);
    write_text(out / "manifest.txt", manifest.to_text());
    return {out / "frames", out / "truth.csv", out / "manifest.txt"};
}

// ---------------------------------------------------------------- infer

InferTask infer_task_from_string(const std::string& text) {
    static const std::map<std::string, InferTask> names = {{"denoise", InferTask::Denoise},
                                                           {"stabilize", InferTask::Stabilize},
                                                           {"track", InferTask::Track},
                                                           {"score", InferTask::Score},
                                                           {"classify", InferTask::Classify}};
    const auto it = names.find(text);
    if (it == names.end())
        throw ContractViolation("unknown task '" + text + "' (denoise, stabilize, track, score, classify)");
    return it->second;
}

namespace {

double log_margin(const std::vector<double>& mass, std::size_t top) {
    double second = 0.0;
    for (std::size_t s = 0; s < mass.size(); ++s)
        if (s != top) second = std::max(second, mass[s]);
    return std::log(mass[top]) - std::log(second);
}

}  // namespace

InferResult cmd_infer(const InferRequest& req) {
    const AnyModel model = load_model(req.model);
    const Frames f = read_frames(req.frames);
    const ImageShape shape = shape_of(model);
    if (!(f.shape == shape))
        throw ContractViolation("frames are " + std::to_string(f.shape.height) + "x" + std::to_string(f.shape.width) +
                                " but the model expects " + std::to_string(shape.height) + "x" +
                                std::to_string(shape.width));
    InferResult res;
    res.frames = f.frames.size();
    const auto* thmm = std::get_if<ThmmModel>(&model);
    const auto need_thmm = [&](const char* task) {
        if (!thmm) throw ContractViolation(std::string("task ") + task + " needs a thmm model, got " + to_string(family_of(model)));
    };

    switch (req.task) {
        case InferTask::Denoise:
        case InferTask::Stabilize: {
            need_thmm(req.task == InferTask::Denoise ? "denoise" : "stabilize");
            const auto frames = req.task == InferTask::Denoise ? denoise(*thmm, f.frames, req.mode, req.parallel)
                                                               : stabilize(*thmm, f.frames, req.parallel);
            write_frames(frames, shape, req.output, 16);
            res.files.push_back(req.output);
            break;
        }
        case InferTask::Track: {
            CsvTable out{{"frame", "class", "i", "j", "dv", "dh", "log_margin"}, {}};
            if (thmm) {
                for (const auto& p : track(*thmm, f.frames, req.viterbi, req.parallel)) {
                    const auto [i, j] = thmm->transforms.grid_coords(p.l);
                    out.rows.push_back({std::to_string(p.t), std::to_string(p.c), std::to_string(i), std::to_string(j),
                                        std::to_string(p.dv), std::to_string(p.dh), fmt(p.log_margin)});
                }
            } else if (const auto* tmg = std::get_if<TmgModel>(&model); tmg && tmg->transforms.grid()) {
                for (std::size_t t = 0; t < f.frames.size(); ++t) {
                    const auto post = tmg_posterior(*tmg, f.frames[t]);
                    const auto [l, c] = post.map_state();
                    const auto [i, j] = tmg->transforms.grid_coords(l);
                    const auto [dv, dh] = tmg->transforms.grid_shift(l);
                    out.rows.push_back({std::to_string(t), std::to_string(c), std::to_string(i), std::to_string(j),
                                        std::to_string(dv), std::to_string(dh),
                                        fmt(log_margin(post.resp, c * tmg->transforms.size() + l))});
                }
            } else {
                throw ContractViolation("task track needs a thmm model or a tmg with a shift grid");
            }
            write_csv(req.output, out);
            res.files.push_back(req.output);
            break;
        }
        case InferTask::Score: {
            const std::vector<Sequence> seqs{f.frames};
            res.loglik = total_loglik(model, seqs, req.parallel);
            write_csv(req.output, CsvTable{{"frames", "loglik", "loglik_per_frame"},
                                           {{std::to_string(res.frames), fmt(res.loglik),
                                             fmt(res.loglik / static_cast<double>(res.frames))}}});
            res.files.push_back(req.output);
            break;
        }
        case InferTask::Classify: {
            std::vector<std::size_t> cls;
            if (thmm) {
                const auto post = forward_backward(*thmm, f.frames, false, req.parallel);
                const std::size_t L = thmm->transforms.size();
                for (const auto& g : post.gamma) {
                    std::vector<double> per_class(thmm->classes, 0.0);
                    for (std::size_t s = 0; s < g.size(); ++s) per_class[s / L] += g[s];
                    cls.push_back(argmax(per_class));
                }
            } else {
                cls = assign_clusters(model, f.frames);
            }
            CsvTable out{{"frame", "class"}, {}};
            for (std::size_t t = 0; t < cls.size(); ++t) out.rows.push_back({std::to_string(t), std::to_string(cls[t])});
            write_csv(req.output, out);
            res.files.push_back(req.output);
            break;
        }
    }
    return res;
}

// ---------------------------------------------------------------- eval

EvalMode eval_mode_from_string(const std::string& text) {
    if (text == "classification") return EvalMode::Classification;
    if (text == "clustering") return EvalMode::Clustering;
    if (text == "tracking") return EvalMode::Tracking;
    throw ContractViolation("unknown eval mode '" + text + "' (classification, clustering, tracking)");
}

std::string EvalReport::to_text() const {
    std::ostringstream os;
    os << "rows " << rows << "\n";
    switch (mode) {
        case EvalMode::Classification: os << "classification_error " << fmt(value) << "\n"; break;
        case EvalMode::Clustering: os << "cluster_purity_error " << fmt(value) << "\n"; break;
        case EvalMode::Tracking:
            os << "shift_agreement " << fmt(value) << "\n";
            os << "aligned_shift_agreement " << fmt(aligned_value) << "\n";
            break;
    }
    return os.str();
}

namespace {

long parse_int(const std::string& s, const std::string& what) {
    long v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw MediaError(what + ": expected an integer, got '" + s + "'");
    return v;
}

std::vector<long> int_column(const CsvTable& t, const std::string& name, const std::string& origin) {
    const std::size_t c = t.column(name);
    std::vector<long> out;
    for (const auto& r : t.rows) out.push_back(parse_int(r[c], origin + " column " + name));
    return out;
}

int reduce(long v, int period) { return period > 0 ? static_cast<int>(((v % period) + period) % period) : static_cast<int>(v); }

}  // namespace

EvalReport evaluate_tables(const CsvTable& pred, const CsvTable& truth, EvalMode mode, std::pair<int, int> wrap) {
    if (pred.rows.size() != truth.rows.size())
        throw ContractViolation("eval: predictions have " + std::to_string(pred.rows.size()) + " rows, truth has " +
                                std::to_string(truth.rows.size()));
    if (pred.rows.empty()) throw ContractViolation("eval: no rows");
    const auto has = [](const CsvTable& t, const char* name) {
        return std::find(t.header.begin(), t.header.end(), name) != t.header.end();
    };
    if (has(pred, "frame") && has(truth, "frame") &&
        int_column(pred, "frame", "predictions") != int_column(truth, "frame", "truth"))
        throw ContractViolation("eval: frame ids of predictions and truth differ");

    EvalReport r;
    r.mode = mode;
    r.rows = pred.rows.size();
    if (mode != EvalMode::Tracking) {
        std::vector<std::size_t> p, t;
        for (long v : int_column(pred, "class", "predictions")) p.push_back(static_cast<std::size_t>(v));
        for (long v : int_column(truth, "class", "truth")) t.push_back(static_cast<std::size_t>(v));
        r.value = mode == EvalMode::Classification ? classification_error(p, t) : cluster_purity_error(p, t);
        return r;
    }
    const auto pv = int_column(pred, "dv", "predictions"), ph = int_column(pred, "dh", "predictions");
    const auto tv = int_column(truth, "dv", "truth"), th = int_column(truth, "dh", "truth");
    std::vector<long> pc(r.rows, 0);
    if (has(pred, "class")) pc = int_column(pred, "class", "predictions");
    std::vector<std::pair<int, int>> ps, ts;
    std::map<long, std::map<std::pair<int, int>, std::size_t>> offsets;
    for (std::size_t i = 0; i < r.rows; ++i) {
        ps.push_back({reduce(pv[i], wrap.first), reduce(ph[i], wrap.second)});
        ts.push_back({reduce(tv[i], wrap.first), reduce(th[i], wrap.second)});
        ++offsets[pc[i]][{reduce(tv[i] - pv[i], wrap.first), reduce(th[i] - ph[i], wrap.second)}];
    }
    r.value = shift_agreement(ps, ts);
    std::map<long, std::pair<int, int>> best;
    for (const auto& [c, counts] : offsets) {
        std::size_t top = 0;
        for (const auto& [o, n] : counts)
            if (n > top) top = n, best[c] = o;
    }
    std::size_t agree = 0;
    for (std::size_t i = 0; i < r.rows; ++i) {
        const auto o = best[pc[i]];
        agree += reduce(pv[i] + o.first, wrap.first) == ts[i].first && reduce(ph[i] + o.second, wrap.second) == ts[i].second;
    }
    r.aligned_value = static_cast<double>(agree) / static_cast<double>(r.rows);
    return r;
}

EvalReport cmd_eval(const fs::path& predictions, const fs::path& truth, EvalMode mode, std::pair<int, int> wrap) {
    return evaluate_tables(read_csv(predictions), read_csv(truth), mode, wrap);
}

}  // namespace tigm
