//! Event data types and the window/normalization operations on them.

use std::fmt;

use crate::error::{Error, Result};

/// Sign of the log-brightness change that produced an event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn from_sign(p: i64) -> Option<Self> {
        match p {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn as_f64(self) -> f64 {
        self.sign() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    /// Microseconds.
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: Polarity) -> Self {
        Self { t, x, y, p }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "GeometryRepr")]
pub struct SensorGeometry {
    width: usize,
    height: usize,
}

#[derive(serde::Deserialize)]
struct GeometryRepr {
    width: usize,
    height: usize,
}

impl TryFrom<GeometryRepr> for SensorGeometry {
    type Error = Error;

    fn try_from(r: GeometryRepr) -> Result<Self> {
        SensorGeometry::new(r.width, r.height)
    }
}

impl SensorGeometry {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width < 2 || height < 2 || width > u16::MAX as usize || height > u16::MAX as usize {
            return Err(Error::InvalidGeometry { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    /// Row-major index of pixel `(x, y)`.
    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }
}

impl fmt::Display for SensorGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// A time-ordered window of events on one sensor.
#[derive(Clone, Debug)]
pub struct EventSlice {
    geometry: SensorGeometry,
    events: Vec<Event>,
    reordered: bool,
}

impl PartialEq for EventSlice {
    fn eq(&self, other: &Self) -> bool {
        self.geometry == other.geometry && self.events == other.events
    }
}

impl EventSlice {
    /// Validates coordinates and stably sorts by timestamp if needed. Ties keep
    /// their input order; [`EventSlice::was_reordered`] reports whether a sort
    /// happened.
    pub fn new(geometry: SensorGeometry, mut events: Vec<Event>) -> Result<Self> {
        for (index, e) in events.iter().enumerate() {
            if !geometry.contains(e.x as i64, e.y as i64) {
                return Err(Error::OutOfBounds {
                    index,
                    x: e.x as i64,
                    y: e.y as i64,
                    width: geometry.width,
                    height: geometry.height,
                });
            }
        }
        let sorted = events.windows(2).all(|w| w[0].t <= w[1].t);
        if !sorted {
            events.sort_by_key(|e| e.t);
        }
        Ok(Self {
            geometry,
            events,
            reordered: !sorted,
        })
    }

    pub fn empty(geometry: SensorGeometry) -> Self {
        Self {
            geometry,
            events: Vec::new(),
            reordered: false,
        }
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// True when the input was not time-sorted and had to be reordered.
    pub fn was_reordered(&self) -> bool {
        self.reordered
    }

    /// Duration between first and last event in microseconds.
    pub fn duration_us(&self) -> u64 {
        match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0,
        }
    }

    /// The first `min(n, len)` events.
    pub fn take_window(&self, n: usize) -> Result<EventSlice> {
        if n == 0 {
            return Err(Error::InvalidArgument("window size must be >= 1".into()));
        }
        let n = n.min(self.events.len());
        Ok(EventSlice {
            geometry: self.geometry,
            events: self.events[..n].to_vec(),
            reordered: false,
        })
    }

    pub fn normalize_timestamps(&self) -> Result<NormalizedEvents> {
        let first = self.events.first().ok_or(Error::EmptyEvents)?.t;
        let duration = self.duration_us();
        let events = self
            .events
            .iter()
            .map(|e| NormalizedEvent {
                t: if duration == 0 {
                    0.0
                } else {
                    (e.t - first) as f64 / duration as f64
                },
                x: e.x,
                y: e.y,
                p: e.p,
            })
            .collect();
        Ok(NormalizedEvents {
            geometry: self.geometry,
            events,
            duration_us: duration,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizedEvent {
    /// Position inside the window, in `[0, 1]`.
    pub t: f64,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

/// Events with timestamps rescaled so the window spans `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedEvents {
    pub(crate) geometry: SensorGeometry,
    pub(crate) events: Vec<NormalizedEvent>,
    pub(crate) duration_us: u64,
}

impl NormalizedEvents {
    /// Builds a normalized set directly; timestamps must already lie in
    /// `[0, 1]` and be non-decreasing.
    pub fn from_parts(
        geometry: SensorGeometry,
        events: Vec<NormalizedEvent>,
        duration_us: u64,
    ) -> Result<Self> {
        for (index, e) in events.iter().enumerate() {
            if !geometry.contains(e.x as i64, e.y as i64) {
                return Err(Error::OutOfBounds {
                    index,
                    x: e.x as i64,
                    y: e.y as i64,
                    width: geometry.width,
                    height: geometry.height,
                });
            }
            if !(0.0..=1.0).contains(&e.t) {
                return Err(Error::InvalidArgument(format!(
                    "normalized timestamp {} of event {index} is outside [0, 1]",
                    e.t
                )));
            }
        }
        if events.windows(2).any(|w| w[0].t > w[1].t) {
            return Err(Error::InvalidArgument(
                "normalized timestamps must be non-decreasing".into(),
            ));
        }
        Ok(Self {
            geometry,
            events,
            duration_us,
        })
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn events(&self) -> &[NormalizedEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn duration_us(&self) -> u64 {
        self.duration_us
    }

    /// Applies the same first/last rescale to the already-normalized times.
    pub fn renormalized(&self) -> NormalizedEvents {
        let (first, last) = match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => (a.t, b.t),
            _ => return self.clone(),
        };
        let span = last - first;
        let events = self
            .events
            .iter()
            .map(|e| NormalizedEvent {
                t: if span > 0.0 { (e.t - first) / span } else { 0.0 },
                ..*e
            })
            .collect();
        NormalizedEvents {
            geometry: self.geometry,
            events,
            duration_us: self.duration_us,
        }
    }
}
