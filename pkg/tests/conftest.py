import pytest

from cvchain.ledger import GPS, Ledger, Registry, Role, Trajectory, VehicleReport

VINS = [
    "1FTWX32L2YEA47477",
    "2HGFG12878H500123",
    "3VWDX7AJ5DM123456",
    "JH4KA7561PC008269",
    "5YJSA1E26HF000337",
]


def report(vin=VINS[0], lon=-75.7530, lat=39.6780, speed=10.0, accel=0.0):
    return VehicleReport(vin, GPS(lon, lat), Trajectory(speed, accel))


@pytest.fixture
def registry():
    reg = Registry()
    reg.register("ctrl-1", Role.CONTROLLER)
    reg.register("rsu-1", Role.RSU)
    reg.register("veh-001", Role.VEHICLE)
    return reg


@pytest.fixture
def admin(registry):
    return registry.get("ctrl-1")


def filled_ledger(registry, n, start=0.0, step=100.0):
    ledger = Ledger(registry)
    admin = registry.get("ctrl-1")
    for i in range(n):
        ledger.append(report(VINS[i % len(VINS)], -75.7530 + i * 1e-5, 39.6780, 5.0 + i % 7, 0.1 * (i % 3)),
                      admin, start + i * step)
    return ledger


@pytest.fixture
def ledger20(registry):
    return filled_ledger(registry, 20)
