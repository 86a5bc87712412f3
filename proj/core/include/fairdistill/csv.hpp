#pragma once

#include <string>
#include <vector>

namespace fairdistill {

// Minimal CSV writing with deterministic number formatting (%.10g), so that
// identical runs produce byte-identical files.
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header);

    CsvWriter& cell(const std::string& v);
    CsvWriter& cell(double v);
    CsvWriter& cell(std::size_t v);
    CsvWriter& cell(int v);
    void end_row();

    const std::string& str() const { return out_; }
    void write_file(const std::string& path) const;
    std::size_t rows() const { return rows_; }

private:
    void sep();
    std::string out_;
    std::size_t columns_ = 0;
    std::size_t col_in_row_ = 0;
    std::size_t rows_ = 0;
};

std::string format_double(double v);

}  // namespace fairdistill
