#pragma once

// Manifest-driven experiment commands behind the `tigm` executable.
//
// A manifest is a flat `key = value` text file ('#' starts a comment). Every
// key has a default, unknown keys are rejected, and command-line flags of
// the same name override file values. Given the code version, a manifest
// determines every output byte (deterministic reductions are on by default).

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tigm/experiments.hpp"
#include "tigm/media_io.hpp"
#include "tigm/model_io.hpp"

namespace tigm {

class ManifestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ManifestKey {
    std::string name;
    std::string default_value;
    std::string help;
};

class Manifest {
public:
    /// All recognized keys in canonical order.
    static const std::vector<ManifestKey>& keys();

    static Manifest parse(const std::string& text, const std::string& origin = "<manifest>");
    static Manifest load(const std::filesystem::path& path);

    /// Throws ManifestError for unknown keys.
    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const { return values_.count(key) != 0; }

    /// Value or the key's default.
    std::string get(const std::string& key) const;
    std::size_t get_size(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<double> get_doubles(const std::string& key) const;  // comma separated

    /// Every key with its resolved value, one `key = value` per line.
    std::string to_text() const;

private:
    std::map<std::string, std::string> values_;
};

/// Frames from data.frames when set, otherwise from the gen.* generator.
Dataset manifest_data(const Manifest& manifest);
TrainSettings manifest_settings(const Manifest& manifest);
ParallelConfig manifest_parallel(const Manifest& manifest);

// ---------------------------------------------------------------- commands

struct TrainArtifacts {
    TrainOutcome outcome;
    std::filesystem::path model_file;
    std::vector<std::filesystem::path> files;  // everything written, model first
};

/// Writes into `output`: model.tigm, steps.csv (every restart), means.pgm,
/// variances.pgm, factors.pgm (TCA/MTCA), noise.pgm and manifest.txt.
TrainArtifacts cmd_train(const Manifest& manifest, std::ostream* log = nullptr);

/// Writes frames/frame_NNNNNN.pgm (16-bit), truth.csv and manifest.txt.
/// Intensities outside [0, 1] are clamped by the PGM encoding.
std::vector<std::filesystem::path> cmd_gen(const Manifest& manifest);

enum class InferTask { Denoise, Stabilize, Track, Score, Classify };
InferTask infer_task_from_string(const std::string& text);

struct InferRequest {
    std::filesystem::path model;
    std::filesystem::path frames;
    InferTask task = InferTask::Score;
    /// Directory for denoise/stabilize, file otherwise.
    std::filesystem::path output;
    DenoiseMode mode = DenoiseMode::Soft;
    /// Track: decode the joint MAP path instead of per-frame posterior modes.
    bool viterbi = false;
    ParallelConfig parallel{};
};

struct InferResult {
    double loglik = 0.0;  // score
    std::size_t frames = 0;
    std::vector<std::filesystem::path> files;
};

/// denoise, stabilize: THMM only. track: THMM or TMG with a shift grid.
/// score, classify: any family.
InferResult cmd_infer(const InferRequest& request);

enum class EvalMode { Classification, Clustering, Tracking };
EvalMode eval_mode_from_string(const std::string& text);

struct EvalReport {
    EvalMode mode = EvalMode::Classification;
    std::size_t rows = 0;
    /// classification/clustering: error rate; tracking: shift agreement.
    double value = 0.0;
    /// tracking only: agreement after the most common per-class offset
    /// between predicted and true shifts is removed (latent frames are
    /// defined only up to a shift).
    double aligned_value = 0.0;

    std::string to_text() const;
};

/// Predictions and truth are CSV files with a `class` column (classification,
/// clustering) or `dv`, `dh` columns (tracking). When both carry a `frame`
/// column the frame ids must agree row by row. A nonzero `wrap` (frame
/// height, width) compares shifts modulo the frame size.
EvalReport cmd_eval(const std::filesystem::path& predictions, const std::filesystem::path& truth, EvalMode mode,
                    std::pair<int, int> wrap = {0, 0});
EvalReport evaluate_tables(const CsvTable& predictions, const CsvTable& truth, EvalMode mode,
                           std::pair<int, int> wrap = {0, 0});

}  // namespace tigm
