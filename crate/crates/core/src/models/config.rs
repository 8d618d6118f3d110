//! `key=value` model description files.

use std::fmt;
use std::str::FromStr;

use super::builders::{
    build_pointwise_classifier, build_smnist, build_unet_spherical, build_vgg11_spherical, SMNIST_WIDTHS,
    UNET_WIDTHS,
};
use super::spec::ModelSpec;
use crate::error::{Result, StmError};
use crate::healpix::Level;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Smnist,
    Vgg11,
    Unet,
    Pointwise,
}

impl FromStr for Arch {
    type Err = StmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smnist" => Ok(Arch::Smnist),
            "vgg11" => Ok(Arch::Vgg11),
            "unet" => Ok(Arch::Unet),
            "pointwise" => Ok(Arch::Pointwise),
            _ => Err(StmError::Config(format!("unknown architecture {s:?}"))),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Smnist => "smnist",
            Arch::Vgg11 => "vgg11",
            Arch::Unet => "unet",
            Arch::Pointwise => "pointwise",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub arch: Arch,
    pub widths: Vec<usize>,
    pub anti_rotation: bool,
    pub num_classes: usize,
    pub entry_level: Level,
    pub in_channels: usize,
}

impl ModelConfig {
    pub fn smnist_default() -> Self {
        ModelConfig {
            arch: Arch::Smnist,
            widths: SMNIST_WIDTHS.to_vec(),
            anti_rotation: false,
            num_classes: 10,
            entry_level: Level::new(4).unwrap(),
            in_channels: 1,
        }
    }

    pub fn build(&self) -> Result<ModelSpec> {
        match self.arch {
            Arch::Smnist => build_smnist(self.entry_level, self.in_channels, &self.widths, self.num_classes),
            Arch::Vgg11 => build_vgg11_spherical(self.entry_level, self.in_channels, self.anti_rotation, self.num_classes),
            Arch::Unet => build_unet_spherical(self.entry_level, self.in_channels, &self.widths, self.num_classes),
            Arch::Pointwise => {
                build_pointwise_classifier(self.entry_level, self.in_channels, &self.widths, self.num_classes)
            }
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut arch = None;
        let mut widths = None;
        let mut anti_rotation = false;
        let mut num_classes = None;
        let mut entry_level = None;
        let mut in_channels = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| StmError::parse_line(i + 1, msg);
            let (key, value) = line.split_once('=').ok_or_else(|| bad(format!("expected key=value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("{key}: not a number: {v:?}")));
            match key {
                "arch" => arch = Some(value.parse::<Arch>().map_err(|e| bad(e.to_string()))?),
                "widths" => widths = Some(value.split(',').map(|w| num(w.trim())).collect::<Result<Vec<_>>>()?),
                "anti_rotation" => {
                    anti_rotation = match value {
                        "true" | "1" => true,
                        "false" | "0" => false,
                        _ => return Err(bad(format!("anti_rotation: expected true or false, got {value:?}"))),
                    }
                }
                "num_classes" => num_classes = Some(num(value)?),
                "entry_level" => {
                    let l = num(value)?;
                    entry_level = Some(Level::new(l.min(u32::MAX as usize) as u32).map_err(|e| bad(e.to_string()))?);
                }
                "in_channels" => in_channels = Some(num(value)?),
                _ => return Err(bad(format!("unknown key {key:?}"))),
            }
        }
        let arch = arch.ok_or_else(|| StmError::Config("model config lacks arch".into()))?;
        let widths = widths.unwrap_or_else(|| match arch {
            Arch::Smnist => SMNIST_WIDTHS.to_vec(),
            Arch::Unet => UNET_WIDTHS.to_vec(),
            _ => Vec::new(),
        });
        let need = |v: Option<usize>, k: &str| v.ok_or_else(|| StmError::Config(format!("model config lacks {k}")));
        Ok(ModelConfig {
            arch,
            widths,
            anti_rotation,
            num_classes: need(num_classes, "num_classes")?,
            entry_level: entry_level.ok_or_else(|| StmError::Config("model config lacks entry_level".into()))?,
            in_channels: need(in_channels, "in_channels")?,
        })
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "arch={}", self.arch)?;
        if !self.widths.is_empty() {
            let w: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
            writeln!(f, "widths={}", w.join(","))?;
        }
        writeln!(f, "anti_rotation={}", self.anti_rotation)?;
        writeln!(f, "num_classes={}", self.num_classes)?;
        writeln!(f, "entry_level={}", self.entry_level.get())?;
        writeln!(f, "in_channels={}", self.in_channels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Location;

    #[test]
    fn roundtrip_through_text() {
        let c = ModelConfig::smnist_default();
        assert_eq!(ModelConfig::parse(&c.to_string()).unwrap(), c);
    }

    #[test]
    fn comments_and_spacing() {
        let c = ModelConfig::parse("# unet\narch = unet\nwidths=8, 16\nnum_classes=3 # rgb-d\nentry_level=5\nin_channels=4\n")
            .unwrap();
        assert_eq!(c.widths, vec![8, 16]);
        assert!(c.build().is_ok());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = ModelConfig::parse("arch=smnist\nwidths=1,x\n").unwrap_err();
        assert!(matches!(e, StmError::Parse { at: Location::Line(2), .. }), "{e}");
        assert!(ModelConfig::parse("arch=smnist\nbogus=1\n").is_err());
        assert!(ModelConfig::parse("arch=resnet\n").is_err());
        assert!(matches!(ModelConfig::parse("arch=smnist\n"), Err(StmError::Config(_))));
    }
}
