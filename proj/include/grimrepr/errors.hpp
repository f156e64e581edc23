#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace grimrepr {

/// A training phase hit a non-finite loss or otherwise could not continue.
class TrainingAborted : public std::runtime_error {
public:
    TrainingAborted(std::string phase, std::size_t step, const std::string& what)
        : std::runtime_error(phase + " aborted at step " + std::to_string(step) + ": " + what),
          phase_(std::move(phase)), step_(step)
    {
    }

    const std::string& phase() const { return phase_; }
    std::size_t step() const { return step_; }

private:
    std::string phase_;
    std::size_t step_;
};

} // namespace grimrepr
