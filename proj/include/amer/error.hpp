#pragma once

#include <stdexcept>
#include <string>

namespace amer {

enum class Errc {
    ZeroVector,
    DimMismatch,
    CountMismatch,
    NonFinite,
    NonFiniteLoss,
    TooLarge,
    TooLong,
    OrthogonalizationFailed,
    CorpusTooSmall,
    EmptyCorpus,
    NonUnitEntry,
    EmptyTargets,
    SingleTarget,
    SinglePrediction,
    PositiveNotInBatch,
    ShapeMismatch,
    InvalidConfig,
    MissingCorpusIds,
    DivergedLoss,
    NoRecordedForward,
    Io,
};

const char* errc_name(Errc c);

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string& what) {
    if (!cond) fail(code, what);
}

}  // namespace amer
