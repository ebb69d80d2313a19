#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace mmpc {

/**
 * @brief Sampled multichannel input/output record.
 *
 * Rows are samples, columns are channels. Both matrices share the row count
 * and a single sampling interval.
 */
class Dataset {
public:
    Dataset(Eigen::MatrixXd u, Eigen::MatrixXd y, double ts,
            std::vector<std::string> input_names = {}, std::vector<std::string> output_names = {});

    [[nodiscard]] const Eigen::MatrixXd& u() const noexcept { return u_; }
    [[nodiscard]] const Eigen::MatrixXd& y() const noexcept { return y_; }
    [[nodiscard]] double ts() const noexcept { return ts_; }
    [[nodiscard]] Eigen::Index samples() const noexcept { return u_.rows(); }
    [[nodiscard]] Eigen::Index inputs() const noexcept { return u_.cols(); }
    [[nodiscard]] Eigen::Index outputs() const noexcept { return y_.cols(); }
    [[nodiscard]] const std::vector<std::string>& input_names() const noexcept { return input_names_; }
    [[nodiscard]] const std::vector<std::string>& output_names() const noexcept { return output_names_; }

    // Contiguous rows [first, first + count).
    [[nodiscard]] Dataset slice(Eigen::Index first, Eigen::Index count) const;

private:
    Eigen::MatrixXd u_;
    Eigen::MatrixXd y_;
    double ts_;
    std::vector<std::string> input_names_;
    std::vector<std::string> output_names_;
};

struct PrbsSpec {
    int register_length = 10;
    // Feedback taps in polynomial notation: {n, k, ...} means x^n + x^k + ... + 1.
    std::vector<int> taps;
    double low = -1.0;
    double high = 1.0;
    int clock_period = 1;
    std::size_t total_length = 1023;
    std::uint32_t seed = 1;
};

// Maximal-length taps for register lengths 2..16.
[[nodiscard]] std::vector<int> primitive_taps(int register_length);

// Raw LFSR bit stream (before level mapping and hold expansion).
[[nodiscard]] std::vector<std::uint8_t> lfsr_bits(int register_length, const std::vector<int>& taps,
                                                  std::uint32_t seed, std::size_t count);

// Number of steps before the register returns to `seed`.
[[nodiscard]] std::uint64_t lfsr_period(int register_length, const std::vector<int>& taps, std::uint32_t seed);

/**
 * @brief Two-level maximal-length sequence, each bit held `clock_period` samples.
 *
 * Empty `taps` selects the built-in table. Throws ConfigError for a zero seed,
 * low >= high, or taps whose measured period is not 2^n - 1.
 */
[[nodiscard]] Eigen::VectorXd prbs_generate(const PrbsSpec& spec);

// Prefix of floor(N * fraction) rows for training, remainder for validation.
[[nodiscard]] std::pair<Dataset, Dataset> split(const Dataset& d, double fraction);

// CSV with a "t" column plus u*/y* columns; see README for the exact format.
[[nodiscard]] Dataset load_csv(const std::filesystem::path& path);
void save_csv(const Dataset& d, const std::filesystem::path& path);

} // namespace mmpc
