#pragma once

// Self-contained model files: a short text header followed by little-endian
// binary parameter blocks and an FNV-1a 64-bit checksum over everything
// before it. Layout is documented in docs/model_format.md.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <variant>

#include "tigm/factor_models.hpp"
#include "tigm/thmm.hpp"
#include "tigm/tmg.hpp"

namespace tigm {

class ModelIoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
/// Payload does not match its trailing checksum (corruption or truncation).
class ChecksumError : public ModelIoError {
public:
    using ModelIoError::ModelIoError;
};
/// Written by a different format version.
class VersionError : public ModelIoError {
public:
    using ModelIoError::ModelIoError;
};
/// Family tag is not one of tmg, tca, mtca, thmm.
class UnknownFamilyError : public ModelIoError {
public:
    using ModelIoError::ModelIoError;
};
/// Valid file of another family than the caller asked for.
class FamilyMismatchError : public ModelIoError {
public:
    using ModelIoError::ModelIoError;
};
/// Checksum passed but the header or blocks are inconsistent.
class FormatError : public ModelIoError {
public:
    using ModelIoError::ModelIoError;
};

inline constexpr int kModelFormatVersion = 1;

enum class Family { Tmg, Tca, Mtca, Thmm };
const char* to_string(Family family);
Family family_from_string(const std::string& text);  // throws UnknownFamilyError

using AnyModel = std::variant<TmgModel, TcaModel, MtcaModel, ThmmModel>;

Family family_of(const AnyModel& model);

/// Canonical byte image of a model: equal models give equal bytes.
std::string serialize_model(const AnyModel& model);
AnyModel deserialize_model(const std::string& bytes);

void save_model(const AnyModel& model, const std::filesystem::path& path);
AnyModel load_model(const std::filesystem::path& path);

TmgModel load_tmg(const std::filesystem::path& path);
TcaModel load_tca(const std::filesystem::path& path);
MtcaModel load_mtca(const std::filesystem::path& path);
ThmmModel load_thmm(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace tigm
