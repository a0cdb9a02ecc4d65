"""Conversions between lab units and atomic units (Hartree, a.u. of time and field)."""
import math

HARTREE_PER_CM = 1.0 / 219474.63
FS_PER_AU = 0.0241888
K_B = 3.16681e-6  # Hartree / K
INTENSITY_AU = 3.50945e16  # W/cm^2 for a field amplitude of 1 a.u.


def cm_to_hartree(x):
    return x * HARTREE_PER_CM


def hartree_to_cm(x):
    return x / HARTREE_PER_CM


def fs_to_au(t):
    return t / FS_PER_AU


def au_to_fs(t):
    return t * FS_PER_AU


def kelvin_to_hartree(temp):
    return temp * K_B


def hartree_to_kelvin(energy):
    return energy / K_B


def intensity_to_field(intensity):
    """Peak intensity in W/cm^2 -> field amplitude in a.u."""
    return math.sqrt(intensity / INTENSITY_AU)


def field_to_intensity(amplitude):
    return amplitude**2 * INTENSITY_AU


def fwhm_to_sigma(fwhm):
    return fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
