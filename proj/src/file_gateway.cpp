#include "lcm/file_gateway.hpp"

#include <sqlite3.h>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lcm/errors.hpp"
#include "lcm/ids.hpp"

namespace lcm {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

std::optional<std::string> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string lower_ext(const std::string& path) {
    std::string ext = fs::path(path).extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return ext;
}

bool looks_binary(const std::string& head) {
    return head.find('\0') != std::string::npos;
}

// --- CSV helpers -----------------------------------------------------------

// Minimal RFC-4180 row split: quoted fields may contain commas and doubled
// quotes. Good enough for digesting; not a general CSV library.
std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

enum class CellType { empty, boolean, integer, floating, text };

CellType classify_cell(const std::string& cell) {
    if (cell.empty()) return CellType::empty;
    if (cell == "true" || cell == "false" || cell == "TRUE" || cell == "FALSE")
        return CellType::boolean;
    char* end = nullptr;
    errno = 0;
    std::strtoll(cell.c_str(), &end, 10);
    if (errno == 0 && end && *end == '\0') return CellType::integer;
    errno = 0;
    std::strtod(cell.c_str(), &end);
    if (errno == 0 && end && *end == '\0') return CellType::floating;
    return CellType::text;
}

const char* cell_type_name(CellType t) {
    switch (t) {
        case CellType::empty: return "empty";
        case CellType::boolean: return "bool";
        case CellType::integer: return "int";
        case CellType::floating: return "float";
        case CellType::text: return "string";
    }
    return "string";
}

// Widening join: int < float < string; empty defers to anything.
CellType merge_cell_types(CellType a, CellType b) {
    if (a == b) return a;
    if (a == CellType::empty) return b;
    if (b == CellType::empty) return a;
    if ((a == CellType::integer && b == CellType::floating) ||
        (a == CellType::floating && b == CellType::integer))
        return CellType::floating;
    return CellType::text;
}

std::string json_type_name(const json& v) {
    switch (v.type()) {
        case json::value_t::object: return "object";
        case json::value_t::array: return "array";
        case json::value_t::string: return "string";
        case json::value_t::boolean: return "bool";
        case json::value_t::number_integer:
        case json::value_t::number_unsigned: return "int";
        case json::value_t::number_float: return "float";
        case json::value_t::null: return "null";
        default: return "unknown";
    }
}

}  // namespace

// ---------------------------------------------------------------------------

FileGateway::FileGateway(std::shared_ptr<Store> store,
                         std::shared_ptr<TokenCounter> counter,
                         std::shared_ptr<Summarizer> summarizer,
                         std::shared_ptr<Controller> controller, GatewayConfig config)
    : store_(std::move(store)),
      counter_(std::move(counter)),
      summarizer_(std::move(summarizer)),
      controller_(std::move(controller)),
      config_(std::move(config)) {}

MimeKind FileGateway::infer_mime_kind(const std::string& path, const std::string& head) {
    if (head.rfind("SQLite format 3", 0) == 0) return MimeKind::sql;

    static const std::regex code_ext(
        "\\.(c|cc|cpp|cxx|h|hh|hpp|hxx|py|rs|go|js|jsx|ts|tsx|java|kt|rb|sh|pl|"
        "lua|swift|scala|cs|m|mm)");
    std::string ext = lower_ext(path);
    if (ext == ".json" || ext == ".jsonl" || ext == ".ndjson") return MimeKind::json;
    if (ext == ".csv" || ext == ".tsv") return MimeKind::csv;
    if (ext == ".sql" || ext == ".db" || ext == ".sqlite" || ext == ".sqlite3")
        return MimeKind::sql;
    if (std::regex_match(ext, code_ext)) return MimeKind::code;
    if (looks_binary(head)) return MimeKind::binary;
    // Everything else, known or not, digests as text.
    return MimeKind::text;
}

std::string FileGateway::capped(std::string summary) const {
    if (counter_->count(summary) <= config_.exploration_cap) return summary;
    return summarizer_->deterministic_truncate({summary}, config_.exploration_cap);
}

std::string FileGateway::explore_json(const std::string& content) const {
    json parsed;
    bool whole_ok = true;
    try {
        parsed = json::parse(content);
    } catch (const json::parse_error&) {
        whole_ok = false;
    }

    std::ostringstream out;
    if (whole_ok) {
        out << "JSON " << json_type_name(parsed);
        if (parsed.is_object()) {
            out << " with " << parsed.size() << " keys:";
            size_t shown = 0;
            for (const auto& [key, value] : parsed.items()) {
                if (shown++ == 50) {
                    out << " ...";
                    break;
                }
                out << "\n  " << key << ": " << json_type_name(value);
            }
        } else if (parsed.is_array()) {
            out << " of " << parsed.size() << " elements";
            if (!parsed.empty()) {
                out << "; first is " << json_type_name(parsed.front());
                if (parsed.front().is_object()) {
                    out << " with keys:";
                    for (const auto& [key, value] : parsed.front().items())
                        out << " " << key << "(" << json_type_name(value) << ")";
                }
            }
        }
        return out.str();
    }

    // Line-delimited JSON: digest per-record instead.
    std::istringstream in(content);
    std::string line;
    std::int64_t records = 0, bad = 0;
    json first;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            json j = json::parse(line);
            if (records == 0) first = j;
            ++records;
        } catch (const json::parse_error&) {
            ++bad;
        }
    }
    if (records > 0) {
        out << "JSONL with " << records << " records";
        if (bad > 0) out << " (" << bad << " unparsable lines)";
        if (first.is_object()) {
            out << "; first record keys:";
            for (const auto& [key, value] : first.items())
                out << " " << key << "(" << json_type_name(value) << ")";
        }
        return out.str();
    }
    return "unparsable JSON (neither a document nor JSON lines)";
}

std::string FileGateway::explore_csv(const std::string& content) const {
    std::istringstream in(content);
    std::string line;
    if (!std::getline(in, line))
        return "empty CSV";
    std::vector<std::string> header = split_csv_row(line);

    std::vector<CellType> types(header.size(), CellType::empty);
    std::int64_t rows = 0, sampled = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++rows;
        if (sampled < config_.csv_sample_rows) {
            ++sampled;
            auto cells = split_csv_row(line);
            for (size_t i = 0; i < header.size() && i < cells.size(); ++i)
                types[i] = merge_cell_types(types[i], classify_cell(cells[i]));
        }
    }

    std::ostringstream out;
    out << "CSV with " << header.size() << " columns, " << rows << " data rows";
    if (sampled < rows) out << " (types from first " << sampled << ")";
    out << ":";
    for (size_t i = 0; i < header.size(); ++i)
        out << "\n  " << header[i] << ": " << cell_type_name(types[i]);
    return out.str();
}

std::string FileGateway::explore_sql(const std::string& path) const {
    sqlite3* db = nullptr;
    if (sqlite3_open_v2(path.c_str(), &db, SQLITE_OPEN_READONLY, nullptr) !=
        SQLITE_OK) {
        if (db) sqlite3_close(db);
        auto content = read_file(path);
        return "unreadable database; treated as binary. " +
               explore_binary(content.value_or(""));
    }

    sqlite3_stmt* tables = nullptr;
    if (sqlite3_prepare_v2(db,
                           "SELECT name FROM sqlite_master WHERE type='table' "
                           "ORDER BY name",
                           -1, &tables, nullptr) != SQLITE_OK) {
        // Opens lazily, so a non-database file surfaces here.
        sqlite3_finalize(tables);
        sqlite3_close(db);
        auto content = read_file(path);
        return "not readable as a database; treated as binary. " +
               explore_binary(content.value_or(""));
    }

    std::ostringstream out;
    out << "SQLite database:";
    int table_count = 0;
    {
        while (sqlite3_step(tables) == SQLITE_ROW) {
            ++table_count;
            std::string table =
                reinterpret_cast<const char*>(sqlite3_column_text(tables, 0));
            out << "\n  " << table << "(";
            sqlite3_stmt* cols = nullptr;
            std::string pragma = "PRAGMA table_info(\"" + table + "\")";
            if (sqlite3_prepare_v2(db, pragma.c_str(), -1, &cols, nullptr) ==
                SQLITE_OK) {
                bool first = true;
                while (sqlite3_step(cols) == SQLITE_ROW) {
                    if (!first) out << ", ";
                    first = false;
                    out << reinterpret_cast<const char*>(sqlite3_column_text(cols, 1))
                        << " "
                        << reinterpret_cast<const char*>(sqlite3_column_text(cols, 2));
                }
            }
            sqlite3_finalize(cols);
            out << ")";
        }
    }
    sqlite3_finalize(tables);
    sqlite3_close(db);
    if (table_count == 0) out << " no tables";
    return out.str();
}

std::string FileGateway::explore_code(const std::string& content) const {
    // Signature-ish lines: keyword definitions across common languages plus
    // C-style "type name(args)" headers.
    static const std::regex keyword_def(
        R"(^\s*(?:export\s+|pub\s+|public\s+|private\s+|static\s+|async\s+)*)"
        R"((def|class|fn|func|function|struct|enum|trait|interface|impl)\s+[A-Za-z_][\w:<>]*)");
    static const std::regex c_like(
        R"(^[A-Za-z_][\w:<>,\*&\s]*\s[\*&]*[A-Za-z_][\w:]*\s*\([^;{]*\)\s*(const\s*)?\{?\s*$)");

    std::istringstream in(content);
    std::string line;
    std::int64_t line_count = 0;
    std::vector<std::string> signatures;
    while (std::getline(in, line)) {
        ++line_count;
        if (signatures.size() >= 100) continue;
        std::string trimmed = line;
        while (!trimmed.empty() && (trimmed.back() == '\r' || trimmed.back() == ' '))
            trimmed.pop_back();
        if (trimmed.empty()) continue;
        if (std::regex_search(trimmed, keyword_def) ||
            std::regex_match(trimmed, c_like))
            signatures.push_back(trimmed);
    }

    std::ostringstream out;
    out << "code, " << line_count << " lines, " << signatures.size()
        << " signatures:";
    for (const auto& sig : signatures) out << "\n  " << sig;
    return out.str();
}

std::string FileGateway::explore_text(const std::string& content,
                                      Provider* provider) const {
    // Prose gets a model digest of its head; everything else deterministic.
    constexpr size_t kHeadBytes = 32768;
    std::string head = content.substr(0, kHeadBytes);
    if (provider) {
        CompletionRequest req;
        req.mode_tag = "explore_text";
        req.max_tokens = config_.exploration_cap;
        req.messages.push_back(
            {"user",
             "Describe this file in at most " + std::to_string(config_.exploration_cap) +
                 " tokens: what it contains, its structure, anything notable.\n\n" +
                 head});
        try {
            return provider->complete(req).text;
        } catch (const ProviderError&) {
            // fall through to the deterministic excerpt
        }
    }
    return summarizer_->deterministic_truncate({head}, config_.exploration_cap);
}

std::string FileGateway::explore_binary(const std::string& content) const {
    std::ostringstream out;
    out << "binary, " << content.size() << " bytes";
    if (!content.empty()) {
        out << ", magic:";
        char buf[8];
        for (size_t i = 0; i < content.size() && i < 8; ++i) {
            snprintf(buf, sizeof(buf), " %02x",
                     static_cast<unsigned char>(content[i]));
            out << buf;
        }
    }
    return out.str();
}

ExplorationReport FileGateway::explore(const std::string& path, MimeKind kind,
                                       Provider* provider) {
    auto content = read_file(path);
    if (!content) throw ValidationError("cannot read file: " + path);

    ExplorationReport report;
    report.mime_kind = kind;
    report.file_tokens = counter_->count(*content);
    report.content_hash = fnv1a_hex(*content);

    if (content->empty()) {
        report.summary = "empty file, 0 tokens";
        return report;
    }

    switch (kind) {
        case MimeKind::json: report.summary = explore_json(*content); break;
        case MimeKind::csv: report.summary = explore_csv(*content); break;
        case MimeKind::sql: report.summary = explore_sql(path); break;
        case MimeKind::code: report.summary = explore_code(*content); break;
        case MimeKind::text: report.summary = explore_text(*content, provider); break;
        case MimeKind::binary: report.summary = explore_binary(*content); break;
    }
    report.summary = capped(report.summary);
    return report;
}

FileRecord FileGateway::explore_and_register(const std::string& path,
                                             Provider* provider,
                                             const std::string& first_seen_message) {
    // One exploration per path: re-registration returns the cached record.
    if (auto existing = store_->find_file_by_path(path)) return *existing;

    std::string head;
    if (auto content = read_file(path)) head = content->substr(0, 8192);
    MimeKind kind = infer_mime_kind(path, head);
    ExplorationReport report = explore(path, kind, provider);
    return store_->register_file(path, report.mime_kind, report.file_tokens,
                                 report.summary, first_seen_message,
                                 report.content_hash);
}

ContextEntry FileGateway::intercept(const InterceptInput& input,
                                    const std::string& session_id,
                                    Provider* provider) {
    std::string path = input.path;
    std::string content;

    if (input.is_path) {
        auto read = read_file(path);
        if (!read) {
            // Unreadable file: the turn continues with an error entry.
            MessageRecord rec = store_->append_message_with_entry(
                session_id, Role::tool, "[tool error] cannot read file: " + path, {},
                EntryKind::raw_message);
            ContextEntry entry;
            entry.kind = EntryKind::raw_message;
            entry.ref_id = rec.id;
            entry.token_count = rec.token_count;
            return entry;
        }
        content = std::move(*read);
    } else {
        content = input.text;
    }

    TokenCount tokens = counter_->count(content);
    if (tokens <= config_.file_threshold) {
        // Small enough to live in context verbatim.
        MessageRecord rec = controller_->ingest_item(session_id, Role::tool, content,
                                                     {}, EntryKind::raw_message);
        ContextEntry entry;
        entry.kind = EntryKind::raw_message;
        entry.ref_id = rec.id;
        entry.token_count = rec.token_count;
        return entry;
    }

    // Oversized inline text is spooled to the blob directory so it has a
    // path; oversized files are referenced where they are.
    if (!input.is_path) {
        if (config_.blob_dir.empty())
            throw UsageError("oversized inline tool result and no blob directory");
        fs::create_directories(config_.blob_dir);
        path = (fs::path(config_.blob_dir) /
                (generate_id("blb") + ".txt")).string();
        std::ofstream out(path, std::ios::binary);
        if (!out) throw StorageError("cannot spool blob to " + path);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.close();
    }

    FileRecord file = explore_and_register(path, provider, "");

    std::string reference =
        Controller::render_file_annotation(file) + "\n" + file.exploration_summary;
    MessageRecord rec = controller_->ingest_item(session_id, Role::tool, reference,
                                                 {file.id}, EntryKind::file_reference);

    ContextEntry entry;
    entry.kind = EntryKind::file_reference;
    entry.ref_id = rec.id;
    entry.token_count = rec.token_count;
    return entry;
}

}  // namespace lcm
