#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wpfs/matrix.hpp"

namespace wpfs {

struct Dataset {
    Matrix x;  // N x D
    std::vector<int> y;
    std::size_t class_count = 0;
    std::vector<std::string> feature_names;
    /// Class index -> original label text, in first-appearance order.
    std::vector<std::string> label_names;
    /// Ground-truth informative feature indices (synthetic datasets only).
    std::vector<std::size_t> informative;
};

/// Loads a CSV with a header row. `label_col` names the label column; all
/// other columns must be numeric features. Labels may be integers or strings
/// and are mapped to class indices in first-appearance order. Missing or
/// non-numeric cells raise InputError naming the row and column.
Dataset load_dataset_csv(const std::string& path, const std::string& label_col);

void write_dataset_csv(const Dataset& data, const std::string& path,
                       const std::string& label_col = "label");

/// Loads a numeric CSV with a header row. When a header cell equals
/// `drop_col`, that column is excluded (so dataset files can be used as
/// plain matrices); otherwise every column is a feature.
std::pair<Matrix, std::vector<std::string>> load_matrix_csv(const std::string& path,
                                                            const std::string& drop_col);

/// Per-feature mean and population standard deviation, fitted on the
/// training split only and applied unchanged to validation/test rows.
/// Zero-variance features transform to 0.
struct ZscoreStats {
    std::vector<double> mean;
    std::vector<double> sd;
};

ZscoreStats zscore_fit(const Matrix& train_x);
Matrix zscore_apply(const ZscoreStats& stats, const Matrix& x);

struct SynthSpec {
    std::size_t samples = 150;
    std::size_t features = 2000;
    std::size_t informative = 10;
    std::size_t classes = 2;
    double noise = 1.0;  // sigma of the class-conditional informative coordinates
};

/// Class-conditional Gaussians on `informative` coordinates with class means
/// spaced max(2*sigma, 1) apart (so sigma = 0 stays separable); standard
/// normal noise elsewhere. Labels are stratified as evenly as possible and
/// rows are shuffled. The informative index set is recorded on the dataset.
Dataset synth_dataset(const SynthSpec& spec, std::uint64_t seed);

/// FNV-1a hash of a file's bytes, for manifest dataset digests.
std::uint64_t file_digest(const std::string& path);

/// FNV-1a hash of an in-memory dataset (values and labels).
std::uint64_t dataset_digest(const Dataset& data);

Matrix take_rows(const Matrix& x, const std::vector<std::size_t>& rows);
std::vector<int> take_labels(const std::vector<int>& y, const std::vector<std::size_t>& rows);

}  // namespace wpfs
