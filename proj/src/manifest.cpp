#include "dalign/manifest.hpp"

#include "dalign/errors.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace dalign {

namespace {

std::vector<std::string_view> split_tokens(std::string_view line)
{
    std::vector<std::string_view> tokens;
    std::size_t k = 0;
    while (k < line.size()) {
        while (k < line.size() && (line[k] == ' ' || line[k] == '\t' || line[k] == '\r')) {
            ++k;
        }
        const std::size_t start = k;
        while (k < line.size() && line[k] != ' ' && line[k] != '\t' && line[k] != '\r') {
            ++k;
        }
        if (k > start) {
            tokens.push_back(line.substr(start, k - start));
        }
    }
    return tokens;
}

template <typename T>
T parse_number(std::string_view token, std::size_t line, const char* what)
{
    T value{};
    const auto [end, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc{} || end != token.data() + token.size()) {
        throw FormatError(fmt::format("line {}: invalid {} '{}'", line, what, token), line);
    }
    return value;
}

std::string_view strip_comment(std::string_view line)
{
    const auto hash = line.find('#');
    return hash == std::string_view::npos ? line : line.substr(0, hash);
}

} // namespace

std::size_t DatasetManifest::add_class(const std::string& name)
{
    const auto it = std::find(classes.begin(), classes.end(), name);
    if (it != classes.end()) {
        return static_cast<std::size_t>(it - classes.begin());
    }
    classes.push_back(name);
    class_records.emplace_back();
    return classes.size() - 1;
}

void DatasetManifest::add_record(ManifestRecord record)
{
    class_records.at(record.class_index).push_back(records.size());
    records.push_back(std::move(record));
}

DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& root,
                               bool check_files)
{
    DatasetManifest manifest;
    manifest.root = root;
    std::optional<std::size_t> declared;
    std::size_t header_line = 0;
    std::size_t line_no = 0;
    std::size_t last_line = 0;

    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t eol = std::min(text.find('\n', pos), text.size());
        const std::string_view raw = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        const auto tokens = split_tokens(strip_comment(raw));
        if (tokens.empty()) {
            continue;
        }
        last_line = line_no;

        if (!declared) {
            if (tokens[0] != "classes:" || tokens.size() != 2) {
                throw FormatError(fmt::format("line {}: expected header 'classes: N'", line_no),
                                  line_no);
            }
            declared = parse_number<std::size_t>(tokens[1], line_no, "class count");
            header_line = line_no;
            continue;
        }
        if (tokens[0] == "split:") {
            if (tokens.size() != 2 || !manifest.records.empty()) {
                throw FormatError(
                    fmt::format("line {}: 'split: NAME' must precede all records", line_no),
                    line_no);
            }
            manifest.split = std::string(tokens[1]);
            continue;
        }
        if (tokens.size() < 2) {
            throw FormatError(fmt::format("line {}: record needs a class and a feature path",
                                          line_no),
                              line_no);
        }

        ManifestRecord record;
        record.line = line_no;
        record.feature_path = std::string(tokens[1]);
        std::size_t k = 2;
        if (k < tokens.size() && tokens[k] == "bbox") {
            if (tokens.size() < k + 5) {
                throw FormatError(fmt::format("line {}: bbox needs four integers", line_no),
                                  line_no);
            }
            const long x0 = parse_number<long>(tokens[k + 1], line_no, "bbox coordinate");
            const long y0 = parse_number<long>(tokens[k + 2], line_no, "bbox coordinate");
            const long x1 = parse_number<long>(tokens[k + 3], line_no, "bbox coordinate");
            const long y1 = parse_number<long>(tokens[k + 4], line_no, "bbox coordinate");
            if (x0 >= x1 || y0 >= y1) {
                throw FormatError(fmt::format("line {}: bbox has no area", line_no), line_no);
            }
            record.bbox = BBox(x0, y0, x1, y1);
            k += 5;
        }
        if (k < tokens.size()) {
            record.image_path = std::string(tokens[k]);
            ++k;
        }
        if (k != tokens.size()) {
            throw FormatError(fmt::format("line {}: unexpected token '{}'", line_no, tokens[k]),
                              line_no);
        }
        if (check_files && !std::filesystem::is_regular_file(root / record.feature_path)) {
            throw FormatError(
                fmt::format("line {}: feature file '{}' not found", line_no, record.feature_path),
                line_no);
        }
        record.class_index = manifest.add_class(std::string(tokens[0]));
        manifest.add_record(std::move(record));
    }

    if (!declared) {
        throw FormatError("missing header 'classes: N'", std::max<std::size_t>(last_line, 1));
    }
    if (*declared != manifest.classes.size()) {
        throw FormatError(fmt::format("line {}: header declares {} classes, records name {}",
                                      header_line, *declared, manifest.classes.size()),
                          header_line);
    }
    return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError(fmt::format("cannot open manifest {}", path.string()));
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    try {
        return parse_manifest(buffer.str(), path.parent_path());
    } catch (const FormatError& e) {
        throw FormatError(fmt::format("{}: {}", path.string(), e.what()), e.offset());
    }
}

std::string format_manifest(const DatasetManifest& manifest)
{
    std::string out = fmt::format("classes: {}\n", manifest.classes.size());
    if (!manifest.split.empty()) {
        out += fmt::format("split: {}\n", manifest.split);
    }
    for (const auto& r : manifest.records) {
        out += fmt::format("{} {}", manifest.classes[r.class_index], r.feature_path);
        if (r.bbox) {
            out += fmt::format(" bbox {} {} {} {}", r.bbox->x_min, r.bbox->y_min, r.bbox->x_max,
                               r.bbox->y_max);
        }
        if (r.image_path) {
            out += " " + *r.image_path;
        }
        out += '\n';
    }
    return out;
}

void check_disjoint_splits(const DatasetManifest& a, const DatasetManifest& b)
{
    for (const auto& name : a.classes) {
        if (std::find(b.classes.begin(), b.classes.end(), name) != b.classes.end()) {
            throw DomainError(fmt::format("class '{}' appears in both splits", name));
        }
    }
}

} // namespace dalign
