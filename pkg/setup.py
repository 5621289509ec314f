from setuptools import setup, find_namespace_packages

setup(
    name="srb-gradient",
    version="0.1.0",
    packages=find_namespace_packages(include=[
        'srb_gradient*',
        'tests*'
    ]),
    data_files=[
        ("share/srb-gradient", ["debian/config.py"])
    ],
    install_requires=[
        "numpy>=1.22",
        "scipy>=1.8",
        "numba>=0.56"
    ],
    extras_require={
        'test': [
            'pytest',
            'pytest-timeout',
        ]
    },
    python_requires=">=3.9",
    entry_points={
        "console_scripts": [
            "srb-gradient=srb_gradient.cli:main"
        ]
    }
)
