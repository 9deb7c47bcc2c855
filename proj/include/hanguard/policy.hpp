#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "hanguard/net_types.hpp"

// Role / domain / type / category policy model. Roles grant access to domains, domains group
// device types (type enforcement); categories bind apps to devices (multi-category security).
namespace hanguard::policy {

inline constexpr std::string_view kAdminRole = "Admin";
inline constexpr std::string_view kUserRole = "HANUser";
inline constexpr std::string_view kGuestRole = "Guest";
inline constexpr std::string_view kHomeDomain = "Home";
inline constexpr std::string_view kUnprotectedDomain = "Unprotected";

class LookupError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Role {
    std::string name;
    bool all_domains = false;  // the "*" wildcard; covers domains added later
    std::set<std::string> domains;

    bool operator==(const Role&) const = default;
};

struct DomainDef {
    std::string name;
    std::set<std::string> types;

    bool operator==(const DomainDef&) const = default;
};

enum class Subnet { Phones, Iot };

struct DeviceRecord {
    MacAddress mac;
    Ipv4Address ip;
    std::string device_type;
    std::set<std::string> categories;
    bool is_protected = true;
    Subnet subnet = Subnet::Iot;

    bool operator==(const DeviceRecord&) const = default;
};

struct PhoneRecord {
    MacAddress mac;
    Ipv4Address reserved_ip;
    std::string role;
    std::string user;
    Digest32 credential_hash{};
    std::string cert_id;
    bool is_mcn = false;

    bool operator==(const PhoneRecord&) const = default;
};

struct AppRecord {
    std::string app_id;
    Digest32 signature{};
    std::set<std::string> categories;

    bool operator==(const AppRecord&) const = default;
};

// Immutable value; updates produce a new Policy with a higher version.
struct Policy {
    std::uint64_t version = 0;
    std::map<std::string, Role, std::less<>> roles;
    std::map<std::string, DomainDef, std::less<>> domains;
    std::map<MacAddress, DeviceRecord> devices;
    std::map<MacAddress, PhoneRecord> phones;
    std::map<std::string, AppRecord, std::less<>> apps;

    const DeviceRecord* find_device(MacAddress mac) const;
    const DeviceRecord* find_device_by_ip(Ipv4Address ip) const;
    const PhoneRecord* find_phone(MacAddress mac) const;
    const AppRecord* find_app(std::string_view app_id) const;
    const Role* find_role(std::string_view name) const;

    // Registered phones carry their role; anything else is a Guest.
    std::string role_of(MacAddress mac) const;
    bool may_administer(MacAddress mac) const;

    bool operator==(const Policy&) const = default;
};

enum class Decision { Allow, DenyPhoneLevel, DenyAppLevel };

std::string_view to_string(Decision d);

bool te_check(const Policy& policy, std::string_view role_name, MacAddress device_mac);
bool mcs_check(const Policy& policy, std::string_view app_id, MacAddress device_mac);

// TE first; MCS can only further restrict.
Decision authorize(const Policy& policy, MacAddress phone_mac, std::string_view app_id,
                   MacAddress device_mac);

// ── Setup ────────────────────────────────────────────────────────────────────

struct PhoneSpec {
    MacAddress mac;
    Ipv4Address ip;
    std::string user;
    Digest32 credential_hash{};
    std::string cert_id;
    bool is_mcn = false;
    std::optional<std::string> role;  // default: Admin for the MCN, HANUser otherwise
};

struct DeviceSpec {
    MacAddress mac;
    Ipv4Address ip;
    std::optional<std::string> device_type;  // default: "<mac hex>_t"
    bool is_protected = true;
    Subnet subnet = Subnet::Iot;
};

std::string default_type_name(MacAddress mac);

Policy default_policy(std::span<const PhoneSpec> phones, std::span<const DeviceSpec> devices,
                      std::span<const AppRecord> apps);

Policy bind_app_device(const Policy& policy, std::string_view app_id, MacAddress device_mac,
                       std::string_view category);

// ── Updates ──────────────────────────────────────────────────────────────────

namespace change {
struct UpsertRole { Role role; };
struct RemoveRole { std::string name; };
struct UpsertDomain { DomainDef domain; };
struct RemoveDomain { std::string name; };
struct UpsertDevice { DeviceRecord device; };
struct RemoveDevice { MacAddress mac; };
struct UpsertPhone { PhoneRecord phone; };
struct RemovePhone { MacAddress mac; };
struct UpsertApp { AppRecord app; };
struct RemoveApp { std::string app_id; };
struct Bind { std::string app_id; MacAddress device; std::string category; };
struct UnbindApp { std::string app_id; std::string category; };
struct UnbindDevice { MacAddress device; std::string category; };
}  // namespace change

using PolicyChange =
    std::variant<change::UpsertRole, change::RemoveRole, change::UpsertDomain,
                 change::RemoveDomain, change::UpsertDevice, change::RemoveDevice,
                 change::UpsertPhone, change::RemovePhone, change::UpsertApp, change::RemoveApp,
                 change::Bind, change::UnbindApp, change::UnbindDevice>;

struct PolicyUpdate {
    std::vector<PolicyChange> changes;
};

enum class RejectionKind { Unauthorized, Invalid };

struct UpdateRejection {
    RejectionKind kind;
    std::string reason;
};

using UpdateResult = std::variant<Policy, UpdateRejection>;

// Transactional: every change applies and the result validates, or nothing changes.
// On success the version is exactly policy.version + 1.
UpdateResult apply_update(const Policy& policy, const PolicyUpdate& update, MacAddress actor);

struct Violation {
    std::string record;
    std::string message;

    bool operator==(const Violation&) const = default;
};

std::vector<Violation> validate_policy(const Policy& policy);

}  // namespace hanguard::policy
