//! Turns a raw computed-style observation into a [`FeatureVector`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    BinaryPredictor, BoundingBox, FeatureValue, FeatureVector, CSS_PROPERTIES,
    NUMERIC_CSS_PROPERTIES, PREDICTOR_SOURCE_PROPERTIES,
};

/// What the page reported for one element.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawElementObservation {
    pub computed_style: BTreeMap<String, String>,
    pub bounding_box: BoundingBox,
}

/// Where the element sits in its tree.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TreePosition {
    pub dom_depth: u32,
    pub descendant_count: u32,
    pub subtree_height: u32,
}

#[derive(Debug, Error, PartialEq)]
pub enum ExtractionError {
    #[error("computed style is missing required property `{0}`")]
    MissingProperty(String),
    #[error("property `{property}` has non-numeric value `{value}`")]
    InvalidNumber { property: String, value: String },
    #[error("bounding box is not finite or has negative size: {0:?}")]
    InvalidGeometry(BoundingBox),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    /// Treat an opaque `background-color` as having a background. Turn off
    /// to look at `background-image` only.
    pub background_color_counts: bool,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            background_color_counts: true,
        }
    }
}

/// How a source property is compared against its default.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DefaultTest {
    /// Default when the value is one of these keywords.
    Keyword(&'static [&'static str]),
    /// Default when the value is a color with zero alpha.
    TransparentColor,
}

impl DefaultTest {
    pub fn is_default(&self, value: &str) -> bool {
        match self {
            DefaultTest::Keyword(words) => words.contains(&value.trim()),
            DefaultTest::TransparentColor => is_fully_transparent(value),
        }
    }
}

/// A predictor is set when any of its sources holds a non-default value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictorRule {
    pub predictor: BinaryPredictor,
    pub sources: Vec<(&'static str, DefaultTest)>,
}

const NONE: DefaultTest = DefaultTest::Keyword(&["none"]);
const AUTO: DefaultTest = DefaultTest::Keyword(&["auto"]);

/// The fixed default-detection table for the ten binary predictors.
pub fn binary_predictor_defaults() -> Vec<PredictorRule> {
    use BinaryPredictor::*;
    let rule = |predictor, sources: Vec<(&'static str, DefaultTest)>| PredictorRule {
        predictor,
        sources,
    };
    vec![
        rule(
            HasAnimation,
            vec![
                ("animation-name", NONE),
                ("transition-property", DefaultTest::Keyword(&["all", ""])),
            ],
        ),
        rule(
            HasBackground,
            vec![
                ("background-image", NONE),
                ("background-color", DefaultTest::TransparentColor),
            ],
        ),
        rule(
            HasBorder,
            vec![
                ("border-top-style", NONE),
                ("border-right-style", NONE),
                ("border-bottom-style", NONE),
                ("border-left-style", NONE),
            ],
        ),
        rule(HasOutline, vec![("outline-style", NONE)]),
        rule(HasBoxShadow, vec![("box-shadow", NONE)]),
        rule(HasTextDecoration, vec![("text-decoration-line", NONE)]),
        rule(HasTouchAction, vec![("touch-action", AUTO)]),
        rule(HasTransform, vec![("transform", NONE)]),
        rule(HasWillChange, vec![("will-change", AUTO)]),
        rule(HasZIndex, vec![("z-index", AUTO)]),
    ]
}

/// Every property an observation must carry, sorted and deduplicated.
pub fn required_properties() -> Vec<&'static str> {
    let mut props: Vec<&'static str> = CSS_PROPERTIES
        .iter()
        .chain(PREDICTOR_SOURCE_PROPERTIES.iter())
        .copied()
        .chain(
            binary_predictor_defaults()
                .into_iter()
                .flat_map(|r| r.sources.into_iter().map(|(p, _)| p)),
        )
        .collect();
    props.sort_unstable();
    props.dedup();
    props
}

/// Initial computed values as reported by a browser for an unstyled
/// element. Used to build synthetic observations.
pub fn css_initial_values() -> BTreeMap<String, String> {
    const TABLE: &[(&str, &str)] = &[
        ("align-content", "normal"),
        ("align-items", "normal"),
        ("align-self", "auto"),
        ("backface-visibility", "visible"),
        ("border-block-end-style", "none"),
        ("border-block-start-style", "none"),
        ("border-bottom-style", "none"),
        ("border-collapse", "separate"),
        ("border-inline-end-style", "none"),
        ("border-inline-start-style", "none"),
        ("border-left-style", "none"),
        ("border-right-style", "none"),
        ("border-top-style", "none"),
        ("box-sizing", "content-box"),
        ("clear", "none"),
        ("cursor", "auto"),
        ("display", "block"),
        ("flex-direction", "row"),
        ("flex-grow", "0"),
        ("flex-wrap", "nowrap"),
        ("float", "none"),
        ("font-style", "normal"),
        ("font-weight", "400"),
        ("hyphens", "manual"),
        ("justify-content", "normal"),
        ("list-style-position", "outside"),
        ("list-style-type", "disc"),
        ("mix-blend-mode", "normal"),
        ("object-fit", "fill"),
        ("opacity", "1"),
        ("outline-style", "none"),
        ("overflow-wrap", "normal"),
        ("overflow-x", "visible"),
        ("overflow-y", "visible"),
        ("pointer-events", "auto"),
        ("position", "static"),
        ("resize", "none"),
        ("table-layout", "auto"),
        ("text-align", "start"),
        ("text-decoration-line", "none"),
        ("text-decoration-style", "solid"),
        ("text-overflow", "clip"),
        ("text-rendering", "auto"),
        ("text-size-adjust", "auto"),
        ("text-transform", "none"),
        ("transform-style", "flat"),
        ("unicode-bidi", "normal"),
        ("user-select", "auto"),
        ("visibility", "visible"),
        ("white-space", "normal"),
        ("word-break", "normal"),
        ("animation-name", "none"),
        ("transition-property", "all"),
        ("background-image", "none"),
        ("background-color", "rgba(0, 0, 0, 0)"),
        ("box-shadow", "none"),
        ("touch-action", "auto"),
        ("transform", "none"),
        ("will-change", "auto"),
        ("z-index", "auto"),
    ];
    TABLE
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// `true` for `transparent` and for rgb/rgba/hsl colors whose alpha is 0.
pub fn is_fully_transparent(color: &str) -> bool {
    let c = color.trim().to_ascii_lowercase();
    if c == "transparent" {
        return true;
    }
    let Some(open) = c.find('(') else {
        return false;
    };
    let Some(args) = c[open + 1..].strip_suffix(')') else {
        return false;
    };
    // Legacy comma syntax carries alpha as the 4th argument; the space syntax
    // puts it after a slash.
    let alpha = if let Some((_, a)) = args.split_once('/') {
        a
    } else {
        let parts: Vec<&str> = args.split(',').collect();
        if parts.len() != 4 {
            return false;
        }
        parts[3]
    };
    let alpha = alpha.trim();
    let parsed = match alpha.strip_suffix('%') {
        Some(pct) => pct.trim().parse::<f64>().map(|v| v / 100.0),
        None => alpha.parse::<f64>(),
    };
    matches!(parsed, Ok(a) if a == 0.0)
}

pub fn extract_features(
    obs: &RawElementObservation,
    position: TreePosition,
) -> Result<FeatureVector, ExtractionError> {
    extract_features_with(obs, position, &ExtractionConfig::default())
}

pub fn extract_features_with(
    obs: &RawElementObservation,
    position: TreePosition,
    config: &ExtractionConfig,
) -> Result<FeatureVector, ExtractionError> {
    if !obs.bounding_box.is_valid() {
        return Err(ExtractionError::InvalidGeometry(obs.bounding_box));
    }
    let style = |prop: &str| -> Result<&str, ExtractionError> {
        obs.computed_style
            .get(prop)
            .map(String::as_str)
            .ok_or_else(|| ExtractionError::MissingProperty(prop.to_string()))
    };

    let mut css = Vec::with_capacity(CSS_PROPERTIES.len());
    for prop in CSS_PROPERTIES {
        let raw = style(prop)?;
        let value = if NUMERIC_CSS_PROPERTIES.contains(&prop) {
            let v: f64 = raw
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| ExtractionError::InvalidNumber {
                    property: prop.to_string(),
                    value: raw.to_string(),
                })?;
            FeatureValue::Num(v)
        } else {
            FeatureValue::Cat(raw.to_string())
        };
        css.push(value);
    }

    let mut predictors = [false; 10];
    for rule in binary_predictor_defaults() {
        let mut set = false;
        for (prop, test) in &rule.sources {
            let value = style(prop)?;
            if *prop == "background-color" && !config.background_color_counts {
                continue;
            }
            set |= !test.is_default(value);
        }
        predictors[rule.predictor.index()] = set;
    }

    let predictor_sources = PREDICTOR_SOURCE_PROPERTIES
        .iter()
        .map(|p| style(p).map(str::to_string))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(FeatureVector {
        bounding_box: obs.bounding_box,
        dom_depth: position.dom_depth,
        descendant_count: position.descendant_count,
        subtree_height: position.subtree_height,
        css,
        predictors,
        predictor_sources,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use BinaryPredictor::*;

    fn obs_with(overrides: &[(&str, &str)]) -> RawElementObservation {
        let mut computed_style = css_initial_values();
        for (k, v) in overrides {
            computed_style.insert(k.to_string(), v.to_string());
        }
        RawElementObservation {
            computed_style,
            bounding_box: BoundingBox::new(10.0, 20.0, 100.0, 30.0),
        }
    }

    fn flags(overrides: &[(&str, &str)]) -> [bool; 10] {
        extract_features(&obs_with(overrides), TreePosition::default())
            .unwrap()
            .predictors
    }

    #[test]
    fn defaults_give_no_predictors() {
        let fv = extract_features(&obs_with(&[]), TreePosition::default()).unwrap();
        assert_eq!(fv.predictors, [false; 10]);
        assert_eq!(fv.dom_depth, 0);
        assert_eq!(fv.values().len(), 68);
        assert_eq!(fv.css_value("opacity"), Some(&FeatureValue::Num(1.0)));
        assert_eq!(fv.css_value("font-weight"), Some(&FeatureValue::Cat("400".into())));
    }

    #[test]
    fn background_image_sets_background() {
        assert!(flags(&[("background-image", "url(a.png)")])[HasBackground.index()]);
    }

    #[test]
    fn any_border_side_counts() {
        assert!(flags(&[("border-left-style", "solid")])[HasBorder.index()]);
        assert!(!flags(&[("border-block-end-style", "solid")])[HasBorder.index()]);
    }

    #[test]
    fn default_table_cases() {
        assert!(!flags(&[("z-index", "auto")])[HasZIndex.index()]);
        assert!(flags(&[("z-index", "3")])[HasZIndex.index()]);
        let bg = flags(&[("background-color", "rgba(0, 0, 0, 0)"), ("background-image", "none")]);
        assert!(!bg[HasBackground.index()]);
        assert!(flags(&[("transition-property", "opacity")])[HasAnimation.index()]);
        assert!(!flags(&[("transition-property", "")])[HasAnimation.index()]);
        assert!(flags(&[("animation-name", "spin")])[HasAnimation.index()]);
        assert!(flags(&[("touch-action", "none")])[HasTouchAction.index()]);
        assert!(flags(&[("will-change", "transform")])[HasWillChange.index()]);
        assert!(flags(&[("transform", "matrix(1, 0, 0, 1, 5, 0)")])[HasTransform.index()]);
        assert!(flags(&[("box-shadow", "rgb(0, 0, 0) 0px 1px 2px 0px")])[HasBoxShadow.index()]);
        assert!(flags(&[("outline-style", "dotted")])[HasOutline.index()]);
        assert!(flags(&[("text-decoration-line", "underline")])[HasTextDecoration.index()]);
    }

    #[test]
    fn opaque_background_color_is_configurable() {
        let obs = obs_with(&[("background-color", "rgb(255, 0, 0)")]);
        let on = extract_features(&obs, TreePosition::default()).unwrap();
        assert!(on.predictor(HasBackground));
        let strict = ExtractionConfig {
            background_color_counts: false,
        };
        let off = extract_features_with(&obs, TreePosition::default(), &strict).unwrap();
        assert!(!off.predictor(HasBackground));
    }

    #[test]
    fn transparency_parsing() {
        assert!(is_fully_transparent("transparent"));
        assert!(is_fully_transparent("rgba(0, 0, 0, 0)"));
        assert!(is_fully_transparent("rgba(12, 3, 4, 0.0)"));
        assert!(is_fully_transparent("rgb(0 0 0 / 0%)"));
        assert!(!is_fully_transparent("rgba(0, 0, 0, 0.5)"));
        assert!(!is_fully_transparent("rgb(0, 0, 0)"));
        assert!(!is_fully_transparent("red"));
    }

    #[test]
    fn missing_property_is_named() {
        let mut obs = obs_with(&[]);
        obs.computed_style.remove("cursor");
        assert_eq!(
            extract_features(&obs, TreePosition::default()).unwrap_err(),
            ExtractionError::MissingProperty("cursor".into())
        );
        let mut obs = obs_with(&[]);
        obs.computed_style.remove("z-index");
        assert_eq!(
            extract_features(&obs, TreePosition::default()).unwrap_err(),
            ExtractionError::MissingProperty("z-index".into())
        );
    }

    #[test]
    fn bad_numbers_and_geometry() {
        let obs = obs_with(&[("opacity", "half")]);
        assert!(matches!(
            extract_features(&obs, TreePosition::default()),
            Err(ExtractionError::InvalidNumber { .. })
        ));
        let mut obs = obs_with(&[]);
        obs.bounding_box.width = -1.0;
        assert!(matches!(
            extract_features(&obs, TreePosition::default()),
            Err(ExtractionError::InvalidGeometry(_))
        ));
        // Negative coordinates are legitimate.
        let mut obs = obs_with(&[]);
        obs.bounding_box.x = -500.0;
        assert!(extract_features(&obs, TreePosition::default()).is_ok());
    }

    #[test]
    fn extra_properties_are_ignored() {
        let obs = obs_with(&[("-webkit-tap-highlight-color", "red"), ("color", "rgb(1, 2, 3)")]);
        let plain = extract_features(&obs_with(&[]), TreePosition::default()).unwrap();
        assert_eq!(extract_features(&obs, TreePosition::default()).unwrap(), plain);
    }

    #[test]
    fn required_property_list() {
        let req = required_properties();
        assert_eq!(req.len(), 60);
        assert!(req.iter().all(|p| css_initial_values().contains_key(*p)));
    }
}
