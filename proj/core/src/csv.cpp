#include "fairdistill/csv.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace fairdistill {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

CsvWriter::CsvWriter(std::vector<std::string> header) : columns_(header.size()) {
    if (header.empty()) throw std::invalid_argument("csv: empty header");
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i > 0) out_ += ',';
        out_ += header[i];
    }
    out_ += '\n';
}

void CsvWriter::sep() {
    if (col_in_row_ > 0) out_ += ',';
}

CsvWriter& CsvWriter::cell(const std::string& v) {
    sep();
    out_ += v;
    ++col_in_row_;
    return *this;
}

CsvWriter& CsvWriter::cell(double v) { return cell(format_double(v)); }
CsvWriter& CsvWriter::cell(std::size_t v) { return cell(std::to_string(v)); }
CsvWriter& CsvWriter::cell(int v) { return cell(std::to_string(v)); }

void CsvWriter::end_row() {
    if (col_in_row_ != columns_) {
        throw std::logic_error("csv: row has " + std::to_string(col_in_row_) + " cells, expected " +
                               std::to_string(columns_));
    }
    out_ += '\n';
    col_in_row_ = 0;
    ++rows_;
}

void CsvWriter::write_file(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os.write(out_.data(), static_cast<std::streamsize>(out_.size()));
    if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace fairdistill
