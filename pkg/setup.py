from setuptools import setup

setup(
    name="vgan",
    version="0.1.0",
    description="Vowel graph attention toolkit for dysarthria severity regression",
    py_modules=["vgan"],
    packages=["helpers"],
    python_requires=">=3.9",
    install_requires=[
        # from requirements.txt
        "numpy==1.26.4",
        "scipy==1.11.4",
        "pandas==2.1.4",
        "scikit-learn==1.4.2",
        "librosa==0.10.1",
        "matplotlib==3.8.2",
        "apprise==1.7.2",
    ],
    extras_require={"test": ["pytest==7.4.4"]},
    entry_points={"console_scripts": ["vgan=vgan:main"]},
)
