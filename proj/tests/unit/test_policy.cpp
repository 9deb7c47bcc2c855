#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "hanguard/policy.hpp"

namespace hanguard::policy {
namespace {

using namespace hanguard::testing;

// ── Examples ─────────────────────────────────────────────────────────────────

TEST(TeCheck, GuestCannotReachHome) {
    const auto p = home_policy();
    EXPECT_FALSE(te_check(p, kGuestRole, kSwitch));
    EXPECT_FALSE(te_check(p, kGuestRole, kCamera));
}

TEST(TeCheck, AdminReachesEveryDevice) {
    const auto p = home_policy();
    for (const auto& [mac, dev] : p.devices) EXPECT_TRUE(te_check(p, kAdminRole, mac)) << mac.to_string();
}

TEST(TeCheck, UserDeniedTypeOnlyInUnprotected) {
    const auto p = home_policy();
    EXPECT_TRUE(te_check(p, kUserRole, kSwitch));
    EXPECT_FALSE(te_check(p, kUserRole, kLaptop));
}

TEST(TeCheck, UnknownRoleOrDeviceThrows) {
    const auto p = home_policy();
    EXPECT_THROW(te_check(p, "Nobody", kSwitch), LookupError);
    EXPECT_THROW(te_check(p, kUserRole, mac_of(9, 9)), LookupError);
}

TEST(McsCheck, CategoryIntersection) {
    auto p = home_policy();
    p = bind_app_device(p, kOther, kCamera, "iBaby");
    EXPECT_TRUE(mcs_check(p, kOther, kCamera));
    EXPECT_FALSE(mcs_check(p, kWemo, kCamera));  // wemo vs iBaby
    EXPECT_TRUE(mcs_check(p, kWemo, kSwitch));
}

TEST(McsCheck, EmptyCategoriesNeverMatch) {
    auto p = home_policy();
    p.apps.at(kOther).categories.clear();
    for (const auto& [mac, dev] : p.devices) EXPECT_FALSE(mcs_check(p, kOther, mac));
}

TEST(Authorize, TeBeforeMcs) {
    auto p = home_policy();
    // A phone whose role cannot reach Home, with matching categories.
    p.phones.at(kUserPhone).role = std::string(kGuestRole);
    EXPECT_EQ(authorize(p, kUserPhone, kWemo, kSwitch), Decision::DenyPhoneLevel);
}

TEST(Authorize, UserMatchingAndMismatchedCategory) {
    const auto p = home_policy();
    EXPECT_EQ(authorize(p, kUserPhone, kWemo, kSwitch), Decision::Allow);
    EXPECT_EQ(authorize(p, kUserPhone, kWemo, kCamera), Decision::DenyAppLevel);
    EXPECT_EQ(authorize(p, kUserPhone, kOther, kSwitch), Decision::DenyAppLevel);
}

TEST(Authorize, UnknownPrincipalThrows) {
    const auto p = home_policy();
    EXPECT_THROW(authorize(p, kGuestPhone, kWemo, kSwitch), LookupError);
    EXPECT_THROW(authorize(p, kUserPhone, "nope", kSwitch), LookupError);
    EXPECT_THROW(authorize(p, kUserPhone, kWemo, mac_of(9, 9)), LookupError);
}

TEST(DefaultPolicy, ShapeAndRoles) {
    std::vector<PhoneSpec> phones{{kAdminPhone, lan_ip(100), "a", {}, "c", true, std::nullopt},
                                  {kUserPhone, lan_ip(101), "u", {}, "d", false, std::nullopt}};
    std::vector<DeviceSpec> devices{{kSwitch, lan_ip(20), std::nullopt, true, Subnet::Iot}};
    const auto p = default_policy(phones, devices, {});
    EXPECT_EQ(p.version, 1u);
    EXPECT_TRUE(p.roles.at(std::string(kAdminRole)).all_domains);
    EXPECT_EQ(p.roles.at(std::string(kUserRole)).domains, std::set<std::string>{std::string(kHomeDomain)});
    EXPECT_EQ(p.roles.at(std::string(kGuestRole)).domains, std::set<std::string>{std::string(kUnprotectedDomain)});
    EXPECT_EQ(p.phones.at(kAdminPhone).role, kAdminRole);
    EXPECT_EQ(p.phones.at(kUserPhone).role, kUserRole);
    EXPECT_TRUE(te_check(p, kUserRole, kSwitch));
    EXPECT_TRUE(p.domains.at(std::string(kHomeDomain)).types.contains(p.devices.at(kSwitch).device_type));
    EXPECT_TRUE(validate_policy(p).empty());
}

TEST(DefaultPolicy, NoAppPassesMcsBeforeBinding) {
    std::vector<PhoneSpec> phones{{kAdminPhone, lan_ip(100), "a", {}, "c", true, std::nullopt}};
    std::vector<DeviceSpec> devices{{kSwitch, lan_ip(20), std::nullopt, true, Subnet::Iot}};
    std::vector<AppRecord> apps{{kWemo, sig_of("belkin"), {}}};
    const auto p = default_policy(phones, devices, apps);
    EXPECT_TRUE(te_check(p, kUserRole, kSwitch));
    EXPECT_FALSE(mcs_check(p, kWemo, kSwitch));
}

TEST(DefaultPolicy, FreshUniqueTypeNames) {
    const auto p = home_policy();
    std::set<std::string> types;
    for (const auto& [mac, dev] : p.devices) types.insert(dev.device_type);
    EXPECT_EQ(types.size(), p.devices.size());
    EXPECT_EQ(p.devices.at(kCamera).device_type, "babyMonitor_t");
}

TEST(DefaultPolicy, UnregisteredPhoneIsGuest) {
    EXPECT_EQ(home_policy().role_of(kGuestPhone), kGuestRole);
}

TEST(DefaultPolicy, RejectsZeroOrTwoMcn) {
    std::vector<DeviceSpec> devices{{kSwitch, lan_ip(20), std::nullopt, true, Subnet::Iot}};
    std::vector<PhoneSpec> two{{kAdminPhone, lan_ip(100), "a", {}, "c", true, std::nullopt},
                               {kUserPhone, lan_ip(101), "u", {}, "d", true, std::nullopt}};
    EXPECT_THROW(default_policy(two, devices, {}), ConfigError);
    two[0].is_mcn = two[1].is_mcn = false;
    EXPECT_THROW(default_policy(two, devices, {}), ConfigError);
}

TEST(BindAppDevice, EnablesMcs) {
    const auto p = home_policy();
    ASSERT_FALSE(mcs_check(p, kOther, kCamera));
    const auto q = bind_app_device(p, kOther, kCamera, "iBaby");
    EXPECT_TRUE(mcs_check(q, kOther, kCamera));
    EXPECT_TRUE(q.apps.at(kOther).categories.contains("iBaby"));
    EXPECT_TRUE(q.devices.at(kCamera).categories.contains("iBaby"));
}

TEST(BindAppDevice, IdempotentSetsVersionStillIncrements) {
    const auto p = home_policy();
    const auto a = bind_app_device(p, kWemo, kSwitch, "wemo");
    EXPECT_EQ(a.apps.at(kWemo).categories, p.apps.at(kWemo).categories);
    EXPECT_EQ(a.devices.at(kSwitch).categories, p.devices.at(kSwitch).categories);
    EXPECT_EQ(a.version, p.version + 1);
}

TEST(BindAppDevice, UnknownDeviceThrows) {
    EXPECT_THROW(bind_app_device(home_policy(), kWemo, mac_of(9, 9), "x"), LookupError);
}

TEST(ApplyUpdate, McnAddsDomain) {
    const auto p = home_policy();
    PolicyUpdate u{{change::UpsertDomain{DomainDef{"cameras_d", {"babyMonitor_t"}}}}};
    auto r = apply_update(p, u, kAdminPhone);
    ASSERT_TRUE(std::holds_alternative<Policy>(r));
    const auto& q = std::get<Policy>(r);
    EXPECT_EQ(q.version, p.version + 1);
    EXPECT_TRUE(q.domains.at("cameras_d").types.contains("babyMonitor_t"));
}

TEST(ApplyUpdate, ScnRejectedUnauthorized) {
    PolicyUpdate u{{change::UpsertDomain{DomainDef{"cameras_d", {"babyMonitor_t"}}}}};
    auto r = apply_update(home_policy(), u, kUserPhone);
    ASSERT_TRUE(std::holds_alternative<UpdateRejection>(r));
    EXPECT_EQ(std::get<UpdateRejection>(r).kind, RejectionKind::Unauthorized);
}

TEST(ApplyUpdate, NonexistentRoleRejectedInvalid) {
    const auto p = home_policy();
    auto r = apply_update(p, PolicyUpdate{{change::RemoveRole{"Nope"}}}, kAdminPhone);
    ASSERT_TRUE(std::holds_alternative<UpdateRejection>(r));
    EXPECT_EQ(std::get<UpdateRejection>(r).kind, RejectionKind::Invalid);

    PolicyUpdate dangling{{change::UpsertRole{Role{"Kids", false, {"no_such_domain"}}}}};
    auto r2 = apply_update(p, dangling, kAdminPhone);
    ASSERT_TRUE(std::holds_alternative<UpdateRejection>(r2));
    EXPECT_EQ(std::get<UpdateRejection>(r2).kind, RejectionKind::Invalid);
}

TEST(ApplyUpdate, GuestCannotBeGrantedHome) {
    PolicyUpdate u{{change::UpsertRole{Role{std::string(kGuestRole), true, {}}}}};
    EXPECT_TRUE(std::holds_alternative<UpdateRejection>(apply_update(home_policy(), u, kAdminPhone)));
}

TEST(ValidatePolicy, Violations) {
    EXPECT_TRUE(validate_policy(home_policy()).empty());

    auto two = home_policy();
    two.phones.at(kUserPhone).is_mcn = true;
    const auto v = validate_policy(two);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_EQ(v[0].message, "duplicate MCN");

    auto missing = home_policy();
    missing.roles.emplace("Kids", Role{"Kids", false, {"toys_d"}});
    const auto m = validate_policy(missing);
    ASSERT_EQ(m.size(), 1u);
    EXPECT_EQ(m[0].record, "role Kids");
}

// ── Properties ───────────────────────────────────────────────────────────────

TEST(PolicyProperty, AuthorizeMatchesBruteForceOracle) {
    std::mt19937_64 rng(20160901);
    std::size_t queries = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto rp = random_policy(rng);
        const auto granted = granted_role_types(rp.policy);
        for (const auto& ph : rp.phones)
            for (const auto& app : rp.apps)
                for (const auto& dev : rp.devices) {
                    ASSERT_EQ(authorize(rp.policy, ph, app, dev), oracle(rp.policy, granted, ph, app, dev))
                        << "trial " << trial;
                    ++queries;
                }
    }
    EXPECT_GT(queries, 10000u);
}

TEST(PolicyProperty, McsOnlyRestricts) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto rp = random_policy(rng);
        // Same policy with every app and device sharing a category: MCS always passes.
        auto open = rp.policy;
        for (auto& [id, a] : open.apps) a.categories.insert("all");
        for (auto& [m, d] : open.devices) d.categories.insert("all");
        for (const auto& ph : rp.phones)
            for (const auto& app : rp.apps)
                for (const auto& dev : rp.devices) {
                    const bool te = te_check(rp.policy, rp.policy.phones.at(ph).role, dev);
                    const auto d = authorize(rp.policy, ph, app, dev);
                    const auto d_open = authorize(open, ph, app, dev);
                    if (!te) {
                        ASSERT_EQ(d, Decision::DenyPhoneLevel);
                        ASSERT_EQ(d_open, Decision::DenyPhoneLevel);
                    } else {
                        ASSERT_EQ(d_open, Decision::Allow);
                        ASSERT_NE(d, Decision::DenyPhoneLevel);
                    }
                    if (d == Decision::Allow) ASSERT_TRUE(te && mcs_check(rp.policy, app, dev));
                }
    }
}

TEST(PolicyProperty, VersionStrictlyIncreasesOnAcceptOnly) {
    std::mt19937_64 rng(99);
    auto p = home_policy();
    int accepted = 0, rejected = 0;
    for (int i = 0; i < 2000; ++i) {
        PolicyUpdate u;
        switch (rng() % 4) {
            case 0: u.changes.push_back(change::Bind{kOther, kCamera, "c" + std::to_string(rng() % 5)}); break;
            case 1: u.changes.push_back(change::UpsertDomain{DomainDef{"x" + std::to_string(rng() % 3), {"t"}}}); break;
            case 2: u.changes.push_back(change::RemoveRole{"missing"}); break;
            default: break;  // empty update
        }
        const auto actor = rng() % 3 == 0 ? kUserPhone : kAdminPhone;
        const auto before = p.version;
        auto r = apply_update(p, u, actor);
        if (auto* next = std::get_if<Policy>(&r)) {
            ASSERT_EQ(next->version, before + 1);
            p = *next;
            ++accepted;
        } else {
            ASSERT_EQ(p.version, before);
            ++rejected;
        }
    }
    EXPECT_GT(accepted, 100);
    EXPECT_GT(rejected, 100);
}

}  // namespace
}  // namespace hanguard::policy
