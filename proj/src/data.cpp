#include "wpfs/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "wpfs/errors.hpp"
#include "wpfs/rng.hpp"

namespace wpfs {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

double parse_cell(const std::string& cell, std::size_t row, const std::string& col) {
    const char* begin = cell.data();
    const char* end = begin + cell.size();
    while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
    while (end > begin && (*(end - 1) == ' ' || *(end - 1) == '\t' || *(end - 1) == '\r')) --end;
    if (begin == end)
        throw InputError("missing value at data row " + std::to_string(row) + ", column '" + col +
                         "'");
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end)
        throw InputError("non-numeric value '" + std::string(begin, end) + "' at data row " +
                         std::to_string(row) + ", column '" + col + "'");
    if (!std::isfinite(value))
        throw InputError("non-finite value at data row " + std::to_string(row) + ", column '" +
                         col + "'");
    return value;
}

std::uint64_t fnv1a_update(std::uint64_t h, const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace

Dataset load_dataset_csv(const std::string& path, const std::string& label_col) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open dataset file '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw InputError("'" + path + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::vector<std::string> header = split_csv_line(line);

    std::size_t label_idx = header.size();
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == label_col) label_idx = i;
    if (label_idx == header.size())
        throw InputError("label column '" + label_col + "' not found in '" + path + "'");

    Dataset data;
    for (std::size_t i = 0; i < header.size(); ++i)
        if (i != label_idx) data.feature_names.push_back(header[i]);

    std::vector<double> values;
    std::vector<std::string> raw_labels;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ++row;
        const std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw InputError("data row " + std::to_string(row) + " has " +
                             std::to_string(cells.size()) + " cells, header has " +
                             std::to_string(header.size()));
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i == label_idx) {
                std::string label = cells[i];
                while (!label.empty() && (label.back() == ' ' || label.back() == '\t'))
                    label.pop_back();
                while (!label.empty() && (label.front() == ' ' || label.front() == '\t'))
                    label.erase(label.begin());
                if (label.empty())
                    throw InputError("missing label at data row " + std::to_string(row));
                raw_labels.push_back(label);
            } else {
                values.push_back(parse_cell(cells[i], row, header[i]));
            }
        }
    }
    if (row == 0) throw InputError("'" + path + "' has no data rows");

    const std::size_t d = data.feature_names.size();
    data.x = Matrix::uninitialized(row, d);
    std::copy(values.begin(), values.end(), data.x.data());

    data.y.reserve(row);
    for (const std::string& label : raw_labels) {
        std::size_t idx = data.label_names.size();
        for (std::size_t c = 0; c < data.label_names.size(); ++c)
            if (data.label_names[c] == label) idx = c;
        if (idx == data.label_names.size()) data.label_names.push_back(label);
        data.y.push_back(static_cast<int>(idx));
    }
    data.class_count = data.label_names.size();
    if (data.class_count < 2)
        throw InputError("'" + path + "' contains a single class; need at least two");
    return data;
}

void write_dataset_csv(const Dataset& data, const std::string& path,
                       const std::string& label_col) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InputError("cannot open '" + path + "' for writing");
    for (const auto& name : data.feature_names) out << name << ',';
    out << label_col << '\n';
    out.precision(17);
    for (std::size_t i = 0; i < data.x.rows(); ++i) {
        for (std::size_t j = 0; j < data.x.cols(); ++j) out << data.x(i, j) << ',';
        const auto c = static_cast<std::size_t>(data.y[i]);
        out << (c < data.label_names.size() ? data.label_names[c] : std::to_string(data.y[i]))
            << '\n';
    }
    if (!out) throw InputError("write to '" + path + "' failed");
}

std::pair<Matrix, std::vector<std::string>> load_matrix_csv(const std::string& path,
                                                            const std::string& drop_col) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open file '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw InputError("'" + path + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::vector<std::string> header = split_csv_line(line);
    std::size_t drop_idx = header.size();
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == drop_col) drop_idx = i;

    std::vector<std::string> names;
    for (std::size_t i = 0; i < header.size(); ++i)
        if (i != drop_idx) names.push_back(header[i]);

    std::vector<double> values;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ++row;
        const std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw InputError("data row " + std::to_string(row) + " has " +
                             std::to_string(cells.size()) + " cells, header has " +
                             std::to_string(header.size()));
        for (std::size_t i = 0; i < cells.size(); ++i)
            if (i != drop_idx) values.push_back(parse_cell(cells[i], row, header[i]));
    }
    if (row == 0) throw InputError("'" + path + "' has no data rows");
    Matrix x = Matrix::uninitialized(row, names.size());
    std::copy(values.begin(), values.end(), x.data());
    return {std::move(x), std::move(names)};
}

ZscoreStats zscore_fit(const Matrix& train_x) {
    if (train_x.rows() == 0) throw ValueError("zscore_fit: empty training matrix");
    ZscoreStats stats;
    const std::size_t d = train_x.cols();
    stats.mean.assign(d, 0.0);
    stats.sd.assign(d, 0.0);
    const double n = static_cast<double>(train_x.rows());
    for (std::size_t i = 0; i < train_x.rows(); ++i) {
        const double* r = train_x.row(i);
        for (std::size_t j = 0; j < d; ++j) stats.mean[j] += r[j];
    }
    for (std::size_t j = 0; j < d; ++j) stats.mean[j] /= n;
    for (std::size_t i = 0; i < train_x.rows(); ++i) {
        const double* r = train_x.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = r[j] - stats.mean[j];
            stats.sd[j] += diff * diff;
        }
    }
    for (std::size_t j = 0; j < d; ++j) stats.sd[j] = std::sqrt(stats.sd[j] / n);
    return stats;
}

Matrix zscore_apply(const ZscoreStats& stats, const Matrix& x) {
    if (x.cols() != stats.mean.size())
        throw ShapeError("zscore_apply: " + x.shape_str() + " does not match stats width " +
                         std::to_string(stats.mean.size()));
    Matrix out = Matrix::uninitialized(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double* r = x.row(i);
        double* o = out.row(i);
        for (std::size_t j = 0; j < x.cols(); ++j)
            o[j] = stats.sd[j] == 0.0 ? 0.0 : (r[j] - stats.mean[j]) / stats.sd[j];
    }
    return out;
}

Dataset synth_dataset(const SynthSpec& spec, std::uint64_t seed) {
    if (spec.informative > spec.features)
        throw ValueError("synth_dataset: informative count exceeds feature count");
    if (spec.classes < 2) throw ValueError("synth_dataset: need at least two classes");
    if (spec.samples < 2 * spec.classes)
        throw ValueError("synth_dataset: need at least 2 samples per class");
    if (spec.noise < 0.0) throw ValueError("synth_dataset: noise must be non-negative");

    Rng rng(seed, 0xDA7A);
    const std::size_t n = spec.samples, d = spec.features, m = spec.informative;

    std::vector<std::size_t> all(d);
    for (std::size_t j = 0; j < d; ++j) all[j] = j;
    rng.shuffle(all);
    std::vector<std::size_t> informative(all.begin(), all.begin() + static_cast<long>(m));
    std::sort(informative.begin(), informative.end());
    std::vector<char> is_informative(d, 0);
    for (std::size_t j : informative) is_informative[j] = 1;

    // Stratified labels, then one shared row shuffle.
    std::vector<int> y;
    y.reserve(n);
    for (std::size_t c = 0; c < spec.classes; ++c) {
        const std::size_t count = n / spec.classes + (c < n % spec.classes ? 1 : 0);
        y.insert(y.end(), count, static_cast<int>(c));
    }
    rng.shuffle(y);

    const double separation = std::max(2.0 * spec.noise, 1.0);
    Matrix x = Matrix::uninitialized(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const double mu = static_cast<double>(y[i]) * separation;
        double* r = x.row(i);
        for (std::size_t j = 0; j < d; ++j)
            r[j] = is_informative[j] ? rng.normal(mu, spec.noise) : rng.normal();
    }

    Dataset data;
    data.x = std::move(x);
    data.y = std::move(y);
    data.class_count = spec.classes;
    data.informative = std::move(informative);
    data.feature_names.reserve(d);
    for (std::size_t j = 0; j < d; ++j) data.feature_names.push_back("f" + std::to_string(j));
    for (std::size_t c = 0; c < spec.classes; ++c) data.label_names.push_back(std::to_string(c));
    return data;
}

std::uint64_t file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open '" + path + "' for hashing");
    std::uint64_t h = 1469598103934665603ULL;
    char buffer[1 << 16];
    while (in.read(buffer, sizeof(buffer)) || in.gcount() > 0)
        h = fnv1a_update(h, buffer, static_cast<std::size_t>(in.gcount()));
    return h;
}

std::uint64_t dataset_digest(const Dataset& data) {
    std::uint64_t h = 1469598103934665603ULL;
    h = fnv1a_update(h, data.x.data(), data.x.size() * sizeof(double));
    h = fnv1a_update(h, data.y.data(), data.y.size() * sizeof(int));
    return h;
}

Matrix take_rows(const Matrix& x, const std::vector<std::size_t>& rows) {
    Matrix out = Matrix::uninitialized(rows.size(), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double* src = x.row(rows[i]);
        std::copy(src, src + x.cols(), out.row(i));
    }
    return out;
}

std::vector<int> take_labels(const std::vector<int>& y, const std::vector<std::size_t>& rows) {
    std::vector<int> out;
    out.reserve(rows.size());
    for (std::size_t r : rows) out.push_back(y[r]);
    return out;
}

}  // namespace wpfs
