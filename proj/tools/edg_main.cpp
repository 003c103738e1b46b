// edg — encrypted, ledger-backed version control for a single data file.
//
// Exit codes: 0 success, 1 usage, 2 permission/authentication,
// 3 integrity/verification, 4 not found, 5 internal.

#include <termios.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "edg/keystore.hpp"
#include "edg/repo.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitPermission = 2;
constexpr int kExitIntegrity = 3;
constexpr int kExitNotFound = 4;
constexpr int kExitInternal = 5;

int exit_code_for(edg::Errc code) {
    switch (code) {
        case edg::Errc::permission_denied:
        case edg::Errc::bad_signature:
        case edg::Errc::authentication_failure:
        case edg::Errc::not_a_recipient:
        case edg::Errc::unwrap_failure:
        case edg::Errc::cannot_orphan_repo:
            return kExitPermission;
        case edg::Errc::integrity_violation:
        case edg::Errc::malformed_patch:
        case edg::Errc::malformed_dek_file:
        case edg::Errc::malformed_record:
            return kExitIntegrity;
        case edg::Errc::not_found:
        case edg::Errc::repo_not_found:
        case edg::Errc::commit_not_found:
        case edg::Errc::member_not_found:
            return kExitNotFound;
        case edg::Errc::invalid_config:
        case edg::Errc::seed_too_short:
            return kExitUsage;
        default:
            return kExitInternal;
    }
}

struct CliConfig {
    std::filesystem::path repo;
    std::string identity;
    bool json_lines = false;
    std::string passphrase_file;
    std::optional<std::uint64_t> timestamp;
};

void emit(const CliConfig& cfg, const json& j, const std::string& human) {
    if (cfg.json_lines)
        std::cout << j.dump() << "\n";
    else
        std::cout << human << "\n";
}

std::uint64_t now_or_override(const CliConfig& cfg) {
    if (cfg.timestamp) return *cfg.timestamp;
    return static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::seconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count());
}

std::string prompt_passphrase(const std::string& label) {
    std::cerr << label << ": " << std::flush;
    termios old_attrs{};
    bool restore = tcgetattr(STDIN_FILENO, &old_attrs) == 0;
    if (restore) {
        termios hidden = old_attrs;
        hidden.c_lflag &= ~static_cast<tcflag_t>(ECHO);
        tcsetattr(STDIN_FILENO, TCSANOW, &hidden);
    }
    std::string pass;
    std::getline(std::cin, pass);
    if (restore) tcsetattr(STDIN_FILENO, TCSANOW, &old_attrs);
    std::cerr << "\n";
    return pass;
}

std::string resolve_passphrase(const CliConfig& cfg) {
    if (!cfg.passphrase_file.empty()) {
        std::ifstream in(cfg.passphrase_file);
        if (!in) throw edg::Error(edg::Errc::not_found,
                                  "cannot read passphrase file " + cfg.passphrase_file);
        std::string pass;
        std::getline(in, pass);
        return pass;
    }
    if (const char* env = std::getenv("EDG_PASSPHRASE")) return env;
    if (isatty(STDIN_FILENO)) return prompt_passphrase("passphrase for " + cfg.identity);
    throw edg::Error(edg::Errc::invalid_config,
                     "no passphrase source: set EDG_PASSPHRASE or use --passphrase-file");
}

std::filesystem::path keystore_dir(const CliConfig& cfg) {
    return cfg.repo / ".edg" / "keystore";
}

edg::Identity load_me(const CliConfig& cfg) {
    if (cfg.identity.empty())
        throw edg::Error(edg::Errc::invalid_config,
                         "no identity: set EDG_IDENTITY or use --identity");
    return edg::load_identity(keystore_dir(cfg), cfg.identity, resolve_passphrase(cfg));
}

edg::Bytes read_input_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw edg::Error(edg::Errc::not_found, "cannot read " + path);
    return edg::Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_output_file(const std::string& path, edg::ByteSpan bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw edg::Error(edg::Errc::io_failure, "cannot write " + path);
}

edg::MemberSpec member_from_keystore(const CliConfig& cfg, const std::string& name,
                                     edg::Role role) {
    return edg::MemberSpec::make(edg::load_public_identity(keystore_dir(cfg), name), role);
}

// "name:role" as accepted by `init --member`
std::pair<std::string, edg::Role> parse_member_arg(const std::string& arg) {
    auto colon = arg.find(':');
    if (colon == std::string::npos)
        throw CLI::ValidationError("--member expects name:role, got '" + arg + "'");
    auto role = edg::role_from_name(arg.substr(colon + 1));
    if (!role) throw CLI::ValidationError("unknown role in '" + arg + "'");
    return {arg.substr(0, colon), *role};
}

json audit_commit_json(const edg::CommitAudit& c) {
    return json{{"seq", c.seq},
                {"structure_ok", c.structure_ok},
                {"parent_ok", c.parent_ok},
                {"sig_ok", c.sig_ok},
                {"author_ok", c.author_ok},
                {"payload_ok", c.payload_ok},
                {"dek_file_ok", c.dek_file_ok},
                {"checkpoint_ok", c.checkpoint_ok}};
}

// commit with a bounded refresh-and-retry loop for lost head races
edg::CommitRecord commit_with_retry(edg::Repository& repo, const edg::Bytes& plain,
                                    std::uint64_t timestamp) {
    for (int attempt = 0;; ++attempt) {
        try {
            return repo.commit(plain, timestamp);
        } catch (const edg::Error& e) {
            if (e.code() != edg::Errc::stale_parent || attempt >= 3) throw;
            repo.refresh();
        }
    }
}

int run(int argc, char** argv) {
    CLI::App app{"edg — encrypted, ledger-backed data versioning"};
    app.require_subcommand(1);
    app.fallthrough();  // accept global flags after the subcommand too

    CliConfig cfg;
    app.add_option("--repo", cfg.repo, "repository directory")->envname("EDG_REPO");
    app.add_option("--identity", cfg.identity, "identity name in the keystore")
        ->envname("EDG_IDENTITY");
    app.add_flag("--json", cfg.json_lines, "machine-readable output, one JSON object per line");
    app.add_option("--passphrase-file", cfg.passphrase_file,
                   "file holding the keystore passphrase (else EDG_PASSPHRASE, else prompt)");
    std::uint64_t ts_override = 0;
    auto* ts_opt = app.add_option("--timestamp", ts_override,
                                  "fixed unix timestamp for commits (scripting)");

    // keygen
    auto* keygen_cmd = app.add_subcommand("keygen", "create an identity in the keystore");
    std::string keygen_name;
    keygen_cmd->add_option("--name", keygen_name, "identity name")->required();

    // init
    auto* init_cmd = app.add_subcommand("init", "create a repository from a plaintext file");
    std::string init_file;
    std::uint64_t init_interval = 16;
    std::vector<std::string> init_members;
    init_cmd->add_option("--file", init_file, "plaintext data file")->required();
    init_cmd->add_option("--interval", init_interval, "checkpoint interval N");
    init_cmd->add_option("--member", init_members, "additional member as name:role");

    // commit
    auto* commit_cmd = app.add_subcommand("commit", "commit a new version of the data file");
    std::string commit_file;
    commit_cmd->add_option("--file", commit_file, "plaintext data file")->required();

    // checkout
    auto* checkout_cmd = app.add_subcommand("checkout", "reconstruct the plaintext at a commit");
    std::uint64_t checkout_seq = 0;
    std::string checkout_out;
    checkout_cmd->add_option("--seq", checkout_seq, "commit sequence number")->required();
    checkout_cmd->add_option("--out", checkout_out, "output path")->required();

    // log / verify / events
    auto* log_cmd = app.add_subcommand("log", "list commits");
    auto* verify_cmd = app.add_subcommand("verify", "audit the chain and reconstruct the head");
    auto* events_cmd = app.add_subcommand("events", "list ledger events");
    std::uint64_t events_from = 0;
    events_cmd->add_option("--from", events_from, "first event_seq to include");

    // grant / revoke
    auto* grant_cmd = app.add_subcommand("grant", "add a member or change a role");
    std::string grant_member, grant_role = "contributor";
    grant_cmd->add_option("--member", grant_member, "member identity name")->required();
    grant_cmd->add_option("--role", grant_role, "owner|contributor|reviewer");
    auto* revoke_cmd = app.add_subcommand("revoke", "remove a member");
    std::string revoke_member;
    revoke_cmd->add_option("--member", revoke_member, "member identity name")->required();

    // gc
    auto* gc_cmd = app.add_subcommand("gc", "collect unreferenced blobs");
    bool gc_release_history = false;
    gc_cmd->add_flag("--release-history", gc_release_history,
                     "also release patch blobs of closed segments");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    }
    if (ts_opt->count() > 0) cfg.timestamp = ts_override;

    if (cfg.repo.empty())
        throw edg::Error(edg::Errc::invalid_config, "no repository: set EDG_REPO or use --repo");

    if (keygen_cmd->parsed()) {
        edg::Identity id = edg::keygen();
        edg::save_identity(keystore_dir(cfg), keygen_name, id, resolve_passphrase(cfg));
        emit(cfg, {{"cmd", "keygen"}, {"name", keygen_name}, {"id", edg::hex_encode(id.id())}},
             "created identity " + keygen_name + " (" + edg::hex_encode(id.id()) + ")");
        return kExitOk;
    }

    if (init_cmd->parsed()) {
        edg::Identity me = load_me(cfg);
        std::vector<edg::MemberSpec> members;
        members.push_back(edg::MemberSpec::make(me.pub, edg::Role::owner));
        for (const std::string& arg : init_members) {
            auto [name, role] = parse_member_arg(arg);
            if (name == cfg.identity) continue;
            members.push_back(member_from_keystore(cfg, name, role));
        }
        edg::Bytes plain = read_input_file(init_file);
        edg::Repository repo = edg::Repository::init(cfg.repo, plain, me, members,
                                                     init_interval, now_or_override(cfg));
        edg::CommitRecord head = repo.head();
        emit(cfg,
             {{"cmd", "init"},
              {"repo_id", edg::hex_encode(repo.repo_id())},
              {"seq", head.seq},
              {"kind", edg::commit_kind_name(head.kind)},
              {"cid", head.cid.hex()}},
             "initialized repo " + edg::hex_encode(repo.repo_id()) + " at seq 0");
        return kExitOk;
    }

    edg::Identity me = load_me(cfg);
    edg::Repository repo = edg::Repository::open(cfg.repo, std::move(me));

    if (commit_cmd->parsed()) {
        edg::Bytes plain = read_input_file(commit_file);
        edg::CommitRecord rec = commit_with_retry(repo, plain, now_or_override(cfg));
        emit(cfg,
             {{"cmd", "commit"},
              {"seq", rec.seq},
              {"kind", edg::commit_kind_name(rec.kind)},
              {"cid", rec.cid.hex()}},
             "committed seq " + std::to_string(rec.seq) + " (" +
                 edg::commit_kind_name(rec.kind) + ") " + rec.cid.hex());
        return kExitOk;
    }

    if (checkout_cmd->parsed()) {
        edg::Bytes plain = repo.checkout(checkout_seq);
        write_output_file(checkout_out, plain);
        emit(cfg,
             {{"cmd", "checkout"},
              {"seq", checkout_seq},
              {"bytes", plain.size()},
              {"out", checkout_out}},
             "checked out seq " + std::to_string(checkout_seq) + " (" +
                 std::to_string(plain.size()) + " bytes) to " + checkout_out);
        return kExitOk;
    }

    if (log_cmd->parsed()) {
        for (const edg::LogEntry& entry : repo.log()) {
            emit(cfg,
                 {{"seq", entry.seq},
                  {"kind", edg::commit_kind_name(entry.kind)},
                  {"cid", entry.cid.hex()},
                  {"author", edg::hex_encode(entry.author_id)},
                  {"timestamp", entry.timestamp}},
                 std::to_string(entry.seq) + "  " + edg::commit_kind_name(entry.kind) + "  " +
                     entry.cid.hex() + "  by " + edg::hex_encode(entry.author_id));
        }
        return kExitOk;
    }

    if (verify_cmd->parsed()) {
        edg::RepoAudit audit = repo.verify();
        for (const edg::CommitAudit& c : audit.chain.commits) {
            std::string human = "seq " + std::to_string(c.seq) + ": " +
                                (c.ok() ? "ok" : "FAILED");
            emit(cfg, audit_commit_json(c), human);
        }
        json summary = {{"ok", audit.ok()},
                        {"reconstruction_ok", audit.reconstruction_ok},
                        {"first_bad_seq", nullptr}};
        if (audit.failing_seq) summary["first_bad_seq"] = *audit.failing_seq;
        for (const std::string& note : audit.chain.notes) summary["notes"].push_back(note);
        emit(cfg, summary,
             audit.ok() ? "verify: all checks passed"
                        : "verify: FAILED" + (audit.failing_seq
                                                  ? " at seq " + std::to_string(*audit.failing_seq)
                                                  : std::string()));
        return audit.ok() ? kExitOk : kExitIntegrity;
    }

    if (events_cmd->parsed()) {
        for (const edg::LedgerEvent& ev : repo.ledger().events(repo.repo_id(), events_from)) {
            json j = {{"event_seq", ev.event_seq},
                      {"kind", edg::event_kind_name(ev.kind)},
                      {"timestamp", ev.timestamp}};
            std::string detail;
            if (auto rec = ev.committed_record()) {
                j["seq"] = rec->seq;
                j["cid"] = rec->cid.hex();
                detail = " seq " + std::to_string(rec->seq);
            } else if (auto rc = ev.role_change()) {
                j["member"] = edg::hex_encode(rc->member_id);
                j["role"] = rc->role ? edg::role_name(*rc->role) : "removed";
                detail = std::string(" member ") + edg::hex_encode(rc->member_id);
            }
            emit(cfg, j,
                 std::to_string(ev.event_seq) + "  " + edg::event_kind_name(ev.kind) + detail);
        }
        return kExitOk;
    }

    if (grant_cmd->parsed()) {
        auto role = edg::role_from_name(grant_role);
        if (!role) throw edg::Error(edg::Errc::invalid_config, "unknown role " + grant_role);
        edg::MemberSpec member = member_from_keystore(cfg, grant_member, *role);
        repo.grant(member, now_or_override(cfg));
        emit(cfg,
             {{"cmd", "grant"},
              {"member", edg::hex_encode(member.id)},
              {"role", edg::role_name(*role)}},
             "granted " + grant_role + " to " + grant_member);
        return kExitOk;
    }

    if (revoke_cmd->parsed()) {
        edg::MemberSpec member = member_from_keystore(cfg, revoke_member, edg::Role::reviewer);
        repo.revoke(member.id, now_or_override(cfg));
        emit(cfg, {{"cmd", "revoke"}, {"member", edg::hex_encode(member.id)}},
             "revoked " + revoke_member);
        return kExitOk;
    }

    if (gc_cmd->parsed()) {
        edg::GcOptions opts;
        opts.keep_history = !gc_release_history;
        std::vector<edg::Cid> removed = repo.gc(opts);
        json j = {{"cmd", "gc"}, {"removed", removed.size()}};
        for (const edg::Cid& cid : removed) j["cids"].push_back(cid.hex());
        emit(cfg, j, "gc removed " + std::to_string(removed.size()) + " blobs");
        return kExitOk;
    }

    return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
    bool json_mode = false;
    for (int i = 1; i < argc; ++i)
        if (std::string_view(argv[i]) == "--json") json_mode = true;

    try {
        return run(argc, argv);
    } catch (const edg::Error& e) {
        if (json_mode)
            std::cerr << json{{"error", edg::errc_name(e.code())}, {"message", e.what()}}.dump()
                      << "\n";
        else
            std::cerr << "error: " << e.what() << " [" << edg::errc_name(e.code()) << "]\n";
        return exit_code_for(e.code());
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        if (json_mode)
            std::cerr << json{{"error", "Internal"}, {"message", e.what()}}.dump() << "\n";
        else
            std::cerr << "error: " << e.what() << "\n";
        return kExitInternal;
    }
}
